import numpy as np
import pytest
from scipy import sparse

from ctxseg.context import LinkMatrix
from ctxseg.errors import ParseError, ValidationError
from ctxseg.propagation import (
    ContextScores,
    PropagationConfig,
    compute_context_scores,
    predict_links,
    propagate_labels,
    read_scores,
    write_scores,
)


def dense_oracle(graph, p, mu):
    """(1-mu)^2 (I - mu L)^-1 P (I - mu L)^-1 via a dense solve."""
    n = graph.n
    system = np.eye(n) - mu * graph.operator.toarray()
    inv = np.linalg.inv(system)
    return (1.0 - mu) ** 2 * (inv @ p @ inv)


class TestConfig:
    def test_defaults_valid(self):
        PropagationConfig().validate()

    def test_zero_mu_allowed_one_rejected(self):
        PropagationConfig(mu=0.0).validate()
        for bad in (1.0, -0.1, 1.5):
            with pytest.raises(ValidationError):
                PropagationConfig(mu=bad).validate()

    def test_other_fields(self):
        for cfg in (
            PropagationConfig(tol=0.0),
            PropagationConfig(max_iter=0),
            PropagationConfig(solver="cg"),
            PropagationConfig(prune_eps=-1e-9),
        ):
            with pytest.raises(ValidationError):
                cfg.validate()


class TestVectorDiffusion:
    def test_fixed_point_residual(self, random_connected_graph):
        g = random_connected_graph(30, k=4, seed=0)
        y = np.zeros(30)
        y[[2, 11, 23]] = 1.0
        cfg = PropagationConfig(mu=0.9)
        h, ok = propagate_labels(g, y, cfg)
        assert ok
        resid = cfg.mu * (g.operator @ h) + (1 - cfg.mu) * y - h
        assert np.abs(resid).max() < 1e-12

    def test_iterative_matches_direct(self, random_connected_graph):
        g = random_connected_graph(25, k=3, seed=1)
        y = np.zeros(25)
        y[5] = 1.0
        direct, _ = propagate_labels(g, y, PropagationConfig(mu=0.8, solver="direct"))
        approx, ok = propagate_labels(
            g, y, PropagationConfig(mu=0.8, solver="iterative", tol=1e-12, max_iter=5000)
        )
        assert ok
        # stopping error is bounded by tol * mu / (1 - mu)
        assert np.abs(direct - approx).max() < 1e-10

    def test_iteration_cap_reported(self, random_connected_graph):
        g = random_connected_graph(20, k=3, seed=2)
        y = np.zeros(20)
        y[0] = 1.0
        _, ok = propagate_labels(
            g, y, PropagationConfig(mu=0.99, solver="iterative", tol=1e-14, max_iter=2)
        )
        assert not ok

    def test_scores_nonnegative_and_bounded(self, random_connected_graph):
        g = random_connected_graph(30, k=4, seed=3)
        y = np.zeros(30)
        y[[0, 7]] = 1.0
        h, _ = propagate_labels(g, y, PropagationConfig(mu=0.95))
        assert h.min() >= 0.0
        # spectral radius <= 1 keeps the result below max(y)
        assert h.max() <= y.max() + 1e-9

    def test_input_validation(self, random_connected_graph):
        g = random_connected_graph(10, k=2, seed=4)
        with pytest.raises(ValidationError):
            propagate_labels(g, np.zeros(9), PropagationConfig())
        with pytest.raises(ValidationError):
            propagate_labels(g, np.full(10, np.nan), PropagationConfig())


class TestTwoStage:
    def test_matches_dense_closed_form(self, random_connected_graph, random_links):
        for seed in range(3):
            g = random_connected_graph(20, k=3, seed=seed)
            p = random_links(20, density=0.05, seed=seed)
            pred = predict_links(
                g, LinkMatrix((0, 1), p), PropagationConfig(mu=0.9, prune_eps=0.0)
            )
            expect = dense_oracle(g, p.toarray(), 0.9)
            np.testing.assert_allclose(pred.scores.toarray(), expect, atol=1e-9)

    def test_mu_zero_is_exact_copy(self, random_connected_graph, random_links):
        g = random_connected_graph(15, k=3, seed=5)
        p = random_links(15, density=0.1, seed=5)
        pred = predict_links(
            g, LinkMatrix((1, 1), p), PropagationConfig(mu=0.0, prune_eps=0.0)
        )
        assert (pred.scores != p).nnz == 0
        assert pred.stage_converged == (True, True)

    def test_row_restriction_is_lossless(self, random_connected_graph, random_links):
        g = random_connected_graph(18, k=3, seed=6)
        p = random_links(18, density=0.06, seed=6)
        cfg = PropagationConfig(mu=0.9, prune_eps=0.0)
        restricted = predict_links(g, LinkMatrix((0, 1), p), cfg)
        everything = predict_links(g, LinkMatrix((0, 1), p), cfg, rows=np.arange(18))
        np.testing.assert_allclose(
            restricted.scores.toarray(), everything.scores.toarray(), atol=1e-12
        )

    def test_symmetric_links_give_symmetric_scores(self, random_connected_graph, random_links):
        g = random_connected_graph(20, k=4, seed=7)
        p = random_links(20, density=0.08, seed=7, symmetric=True)
        pred = predict_links(g, LinkMatrix((0, 0), p), PropagationConfig(mu=0.95, prune_eps=0.0))
        h = pred.scores.toarray()
        assert np.abs(h - h.T).max() < 1e-9

    def test_empty_links_give_empty_scores(self, random_connected_graph):
        g = random_connected_graph(10, k=2, seed=8)
        p = sparse.csr_matrix((10, 10))
        pred = predict_links(g, LinkMatrix((0, 1), p), PropagationConfig(mu=0.9))
        assert pred.scores.nnz == 0
        assert pred.stage_converged == (True, True)

    def test_pruning_drops_small_entries(self, random_connected_graph, random_links):
        g = random_connected_graph(20, k=3, seed=9)
        p = random_links(20, density=0.05, seed=9)
        kept = predict_links(g, LinkMatrix((0, 1), p), PropagationConfig(mu=0.9, prune_eps=0.0))
        eps = float(np.quantile(kept.scores.data, 0.3))  # splits the value range
        pruned = predict_links(g, LinkMatrix((0, 1), p), PropagationConfig(mu=0.9, prune_eps=eps))
        assert 0 < pruned.scores.nnz < kept.scores.nnz
        assert np.abs(pruned.scores.data).min() >= eps
        # surviving entries are identical, not renormalized
        dense_kept = kept.scores.toarray()
        dense_pruned = pruned.scores.toarray()
        mask = dense_pruned != 0
        np.testing.assert_array_equal(dense_pruned[mask], dense_kept[mask])

    def test_shape_mismatch(self, random_connected_graph):
        g = random_connected_graph(10, k=2, seed=10)
        p = sparse.csr_matrix((8, 8))
        with pytest.raises(ValidationError):
            predict_links(g, LinkMatrix((0, 1), p), PropagationConfig())


class TestContextScores:
    def test_normalization_tops_at_one(self, random_connected_graph, random_links):
        g = random_connected_graph(20, k=3, seed=11)
        mats = [
            LinkMatrix((0, 1), random_links(20, density=0.05, seed=11)),
            LinkMatrix((1, 0), random_links(20, density=0.05, seed=12)),
        ]
        scores = compute_context_scores(g, mats, PropagationConfig(mu=0.9))
        assert scores.converged
        for mat in scores.per_pair.values():
            assert mat.data.max() == pytest.approx(1.0)
            assert mat.data.min() >= 0.0

    def test_normalize_off_keeps_raw_scale(self, random_connected_graph, random_links):
        g = random_connected_graph(20, k=3, seed=13)
        mats = [LinkMatrix((0, 1), random_links(20, density=0.05, seed=13))]
        raw = compute_context_scores(g, mats, PropagationConfig(mu=0.9), normalize=False)
        pred = predict_links(g, mats[0], PropagationConfig(mu=0.9))
        np.testing.assert_allclose(
            raw.per_pair[(0, 1)].toarray(), pred.scores.toarray(), atol=0
        )

    def test_non_convergence_collected_per_pair_and_stage(
        self, random_connected_graph, random_links
    ):
        g = random_connected_graph(20, k=3, seed=14)
        mats = [LinkMatrix((0, 1), random_links(20, density=0.05, seed=14))]
        cfg = PropagationConfig(mu=0.99, solver="iterative", tol=1e-14, max_iter=2)
        scores = compute_context_scores(g, mats, cfg)
        assert not scores.converged
        assert ((0, 1), 1) in scores.non_converged
        assert ((0, 1), 2) in scores.non_converged


class TestScoreFile:
    def make_scores(self, random_connected_graph, random_links):
        g = random_connected_graph(15, k=3, seed=15)
        mats = [
            LinkMatrix((0, 1), random_links(15, density=0.08, seed=15)),
            LinkMatrix((1, 1), random_links(15, density=0.08, seed=16)),
        ]
        return compute_context_scores(g, mats, PropagationConfig(mu=0.9))

    def test_roundtrip_is_exact(self, tmp_path, random_connected_graph, random_links):
        scores = self.make_scores(random_connected_graph, random_links)
        p = tmp_path / "s.bin"
        write_scores(scores, p)
        back = read_scores(p)
        assert set(back.per_pair) == set(scores.per_pair)
        for pair, mat in scores.per_pair.items():
            got = back.per_pair[pair]
            assert (got != mat).nnz == 0
            # float64 payload: values are bit-identical
            np.testing.assert_array_equal(
                np.sort(got.tocoo().data), np.sort(mat.tocoo().data)
            )

    def test_deterministic_bytes(self, tmp_path, random_connected_graph, random_links):
        scores = self.make_scores(random_connected_graph, random_links)
        write_scores(scores, tmp_path / "a.bin")
        write_scores(scores, tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "s.bin"
        p.write_bytes(b"XXXX" + bytes(4))
        with pytest.raises(ParseError):
            read_scores(p)

    def test_truncations_and_trailing(self, tmp_path, random_connected_graph, random_links):
        scores = self.make_scores(random_connected_graph, random_links)
        p = tmp_path / "s.bin"
        write_scores(scores, p)
        raw = p.read_bytes()
        for bad in (raw[:6], raw[:20], raw[: len(raw) - 3], raw + b"\0"):
            p.write_bytes(bad)
            with pytest.raises(ParseError):
                read_scores(p)

    def test_index_out_of_range(self, tmp_path):
        import struct

        rec = np.zeros(1, dtype=[("row", "<u4"), ("col", "<u4"), ("val", "<f8")])
        rec["row"] = 9
        payload = b"CTXS" + struct.pack("<I", 1) + struct.pack("<iiII", 0, 1, 4, 1) + rec.tobytes()
        p = tmp_path / "s.bin"
        p.write_bytes(payload)
        with pytest.raises(ParseError):
            read_scores(p)

    def test_non_finite_value(self, tmp_path):
        import struct

        rec = np.zeros(1, dtype=[("row", "<u4"), ("col", "<u4"), ("val", "<f8")])
        rec["val"] = np.inf
        payload = b"CTXS" + struct.pack("<I", 1) + struct.pack("<iiII", 0, 1, 4, 1) + rec.tobytes()
        p = tmp_path / "s.bin"
        p.write_bytes(payload)
        with pytest.raises(ParseError):
            read_scores(p)
