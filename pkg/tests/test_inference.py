import itertools

import numpy as np
import pytest

from ctxseg.crf import EnergyModel, energy_of
from ctxseg.errors import ValidationError
from ctxseg.inference import (
    FlowNetwork,
    alpha_expansion,
    expansion_move,
    initial_labeling,
)


def brute_force_min_cut(n, s, t, arcs):
    """Minimum s-t cut capacity by enumerating all node partitions."""
    best = np.inf
    others = [v for v in range(n) if v not in (s, t)]
    for bits in itertools.product((False, True), repeat=len(others)):
        side = {s: True, t: False}
        side.update(zip(others, bits))
        cut = sum(cap for u, v, cap in arcs if side[u] and not side[v])
        best = min(best, cut)
    return best


def brute_force_labeling(model):
    n, c = model.unary.shape
    best, best_e = None, np.inf
    for assign in itertools.product(range(c), repeat=n):
        e = energy_of(model, np.asarray(assign))
        if e < best_e:
            best, best_e = assign, e
    return np.asarray(best), best_e


def random_model(rng, n, c, pair_density=0.6, diag_scores=False):
    """A random energy model; diag_scores makes every expansion submodular."""
    unary = rng.uniform(0.0, 2.0, size=(n, c))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < pair_density]
    if not pairs:
        pairs = [(0, 1)]
    p = len(pairs)
    if diag_scores:
        scores = np.zeros((p, c, c))
        idx = np.arange(c)
        scores[:, idx, idx] = rng.uniform(0.2, 1.0, size=(p, c))
    else:
        scores = rng.uniform(0.0, 1.0, size=(p, c, c))
    arr = np.asarray(pairs)
    return EnergyModel(unary, arr[:, 0], arr[:, 1], scores, beta=0.3)


class TestFlowNetwork:
    def test_bottleneck_chain(self):
        net = FlowNetwork(3, 0, 2)
        net.add_arc(0, 1, 5.0)
        net.add_arc(1, 2, 3.0)
        flow, side = net.max_flow()
        assert flow == 3.0
        assert side.tolist() == [True, True, False]

    def test_parallel_paths(self):
        net = FlowNetwork(4, 0, 3)
        net.add_arc(0, 1, 3.0)
        net.add_arc(0, 2, 2.0)
        net.add_arc(1, 3, 2.0)
        net.add_arc(2, 3, 2.0)
        net.add_arc(1, 2, 1.0)
        flow, _ = net.max_flow()
        assert flow == 4.0

    def test_reverse_capacity_arc(self):
        # the paired arc carries capacity in the opposite direction
        net = FlowNetwork(2, 0, 1)
        net.add_arc(1, 0, 0.0, rev_cap=5.0)
        flow, _ = net.max_flow()
        assert flow == 5.0

    def test_disconnected_terminals(self):
        net = FlowNetwork(3, 0, 2)
        net.add_arc(0, 1, 4.0)
        flow, side = net.max_flow()
        assert flow == 0.0
        assert side.tolist() == [True, True, False]

    def test_matches_exhaustive_min_cut(self, rng):
        for trial in range(60):
            n = int(rng.integers(4, 7))
            s, t = 0, n - 1
            arcs = []
            net = FlowNetwork(n, s, t)
            for _ in range(int(rng.integers(n, 3 * n))):
                u, v = rng.integers(0, n, size=2)
                if u == v:
                    continue
                cap = float(rng.integers(0, 11))
                rev = float(rng.integers(0, 11))
                net.add_arc(int(u), int(v), cap, rev)
                arcs.append((int(u), int(v), cap))
                arcs.append((int(v), int(u), rev))
            flow, side = net.max_flow()
            # integer capacities: equality is exact in floats
            assert flow == brute_force_min_cut(n, s, t, arcs)
            assert side[s] and not side[t]
            crossing = sum(cap for u, v, cap in arcs if side[u] and not side[v])
            assert crossing == flow

    def test_found_cut_has_flow_capacity_float_caps(self, rng):
        for _ in range(20):
            n = 6
            net = FlowNetwork(n, 0, 5)
            arcs = []
            for _ in range(14):
                u, v = rng.integers(0, n, size=2)
                if u == v:
                    continue
                cap = float(rng.uniform(0.0, 2.0))
                net.add_arc(int(u), int(v), cap)
                arcs.append((int(u), int(v), cap))
            flow, side = net.max_flow()
            crossing = sum(cap for u, v, cap in arcs if side[u] and not side[v])
            assert crossing == pytest.approx(flow, abs=1e-9)

    def test_validation(self):
        with pytest.raises(ValidationError):
            FlowNetwork(1, 0, 0)
        with pytest.raises(ValidationError):
            FlowNetwork(3, 0, 0)
        net = FlowNetwork(3, 0, 2)
        with pytest.raises(ValidationError):
            net.add_arc(0, 0, 1.0)
        with pytest.raises(ValidationError):
            net.add_arc(0, 1, -1.0)
        with pytest.raises(ValidationError):
            net.add_arc(0, 1, np.inf)
        net.max_flow()
        with pytest.raises(ValidationError):
            net.add_arc(0, 1, 1.0)


class TestExpansionMove:
    def tiny_model(self):
        unary = np.array([[0.0, 2.0], [1.0, 0.5]])
        table = np.zeros((1, 2, 2))
        table[0, 0, 1] = 1.0  # only the (0, 1) labeling is supported
        return EnergyModel(unary, np.array([0]), np.array([1]), table, beta=0.5)

    def test_move_reaches_supported_labeling(self):
        # the (0,0) -> alpha=1 table is non-submodular and gets truncated,
        # yet the move still lands on the true optimum
        model = self.tiny_model()
        proposal, energy = expansion_move(model, [0, 0], alpha=1)
        assert proposal.tolist() == [0, 1]
        assert energy == pytest.approx(energy_of(model, [0, 1]))

    def test_reported_energy_is_true_energy(self, rng):
        model = random_model(rng, 6, 3)
        x = rng.integers(0, 3, size=6)
        proposal, energy = expansion_move(model, x, alpha=1)
        assert energy == pytest.approx(energy_of(model, proposal), abs=1e-12)

    def test_move_never_relabels_to_non_alpha(self, rng):
        model = random_model(rng, 8, 3)
        x = rng.integers(0, 3, size=8)
        proposal, _ = expansion_move(model, x, alpha=2)
        changed = proposal != x
        assert (proposal[changed] == 2).all()

    def test_validation(self):
        model = self.tiny_model()
        with pytest.raises(ValidationError):
            expansion_move(model, [0], alpha=0)
        with pytest.raises(ValidationError):
            expansion_move(model, [0, 0], alpha=5)


class TestAlphaExpansion:
    def test_initial_labeling_breaks_ties_low(self):
        unary = np.array([[0.5, 0.5, 1.0], [1.0, 0.2, 0.2]])
        model = EnergyModel(unary, np.empty(0, np.int64), np.empty(0, np.int64),
                            np.empty((0, 3, 3)), beta=1.0)
        assert initial_labeling(model).tolist() == [0, 1]

    def test_binary_submodular_reaches_global_optimum(self, rng):
        for trial in range(12):
            model = random_model(rng, int(rng.integers(3, 7)), 2, diag_scores=True)
            result = alpha_expansion(model)
            _, best = brute_force_labeling(model)
            assert result.converged
            assert result.energy == pytest.approx(best, abs=1e-9)

    def test_multilabel_locally_optimal(self, rng):
        for trial in range(8):
            model = random_model(rng, int(rng.integers(3, 7)), 3)
            result = alpha_expansion(model)
            assert result.converged
            assert result.energy == pytest.approx(
                energy_of(model, result.labeling), abs=1e-12
            )
            for alpha in range(3):
                _, e = expansion_move(model, result.labeling, alpha)
                assert e >= result.energy - 1e-12

    def test_energy_never_worse_than_init(self, rng):
        model = random_model(rng, 8, 3)
        init = rng.integers(0, 3, size=8)
        result = alpha_expansion(model, init=init)
        assert result.energy <= energy_of(model, init) + 1e-12

    def test_deterministic(self, rng):
        model = random_model(rng, 10, 3)
        a = alpha_expansion(model)
        b = alpha_expansion(model)
        assert a.energy == b.energy
        np.testing.assert_array_equal(a.labeling, b.labeling)

    def test_sweep_cap(self, rng):
        model = random_model(rng, 6, 3)
        result = alpha_expansion(model, max_sweeps=1)
        # one sweep may or may not converge, but the result must be scored
        assert result.energy == pytest.approx(energy_of(model, result.labeling))
        with pytest.raises(ValidationError):
            alpha_expansion(model, max_sweeps=0)

    def test_unary_only_model_takes_argmin(self, rng):
        unary = rng.uniform(size=(7, 3))
        model = EnergyModel(unary, np.empty(0, np.int64), np.empty(0, np.int64),
                            np.empty((0, 3, 3)), beta=1.0)
        result = alpha_expansion(model)
        np.testing.assert_array_equal(result.labeling, unary.argmin(axis=1))
        assert result.converged
