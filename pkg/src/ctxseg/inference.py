"""Energy minimization: an s-t max-flow core and alpha-expansion on top.

The max-flow solver follows the dual-tree search strategy: a source tree
and a sink tree grow breadth-first through residual arcs, an augmenting
path is pushed whenever the trees touch, and nodes orphaned by saturated
arcs are re-adopted or freed.  All queues are FIFO and arcs keep insertion
order, so the computed flow, cut and every downstream labeling are
deterministic functions of the construction sequence.

Alpha-expansion reduces each "keep your label or switch to alpha" move to a
min-cut.  Pairwise cost tables that violate the submodularity inequality
``cost(keep, keep) + cost(switch, switch) <= cost(keep, switch) +
cost(switch, keep)`` are truncated by lowering the keep/keep entry, which
can only make the move conservative; a move is accepted only when the true
energy of the proposed labeling strictly decreases.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .crf import EnergyModel, energy_of, pairwise_potential
from .errors import ValidationError

_FREE, _SOURCE, _SINK = 0, 1, 2


class FlowNetwork:
    """Directed s-t network with paired residual arcs.

    ``add_arc(u, v, cap, rev_cap)`` creates arcs ``2k`` (u -> v) and
    ``2k + 1`` (v -> u); ``arc ^ 1`` is always the reverse arc, and pushing
    flow along one adds residual capacity to the other.
    """

    def __init__(self, num_nodes: int, source: int, sink: int):
        if num_nodes < 2:
            raise ValidationError(f"need at least source and sink, got {num_nodes} nodes")
        if not (0 <= source < num_nodes and 0 <= sink < num_nodes) or source == sink:
            raise ValidationError(f"bad terminals source={source} sink={sink}")
        self.num_nodes = num_nodes
        self.source = source
        self.sink = sink
        self.cap: list[float] = []
        self.head: list[int] = []
        self.adj: list[list[int]] = [[] for _ in range(num_nodes)]
        self._solved = False

    def add_arc(self, u: int, v: int, cap: float, rev_cap: float = 0.0) -> None:
        if self._solved:
            raise ValidationError("cannot add arcs after max_flow() ran")
        if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes) or u == v:
            raise ValidationError(f"bad arc endpoints ({u}, {v})")
        if not (cap >= 0.0 and rev_cap >= 0.0 and np.isfinite(cap) and np.isfinite(rev_cap)):
            raise ValidationError(f"arc capacities must be finite and >= 0, got {cap}, {rev_cap}")
        self.adj[u].append(len(self.cap))
        self.cap.append(float(cap))
        self.head.append(v)
        self.adj[v].append(len(self.cap))
        self.cap.append(float(rev_cap))
        self.head.append(u)

    # -- the dual-tree search ------------------------------------------------

    def max_flow(self) -> tuple[float, np.ndarray]:
        """Returns (flow value, source-side membership of the minimum cut).

        The cut is recovered from the final residual graph: everything
        reachable from the source through positive-residual arcs is on the
        source side, so saturated arcs crossing the partition form the
        minimum cut and their capacities sum to the flow value.
        """
        self._solved = True
        cap, head, adj = self.cap, self.head, self.adj
        s, t = self.source, self.sink
        tree = [_FREE] * self.num_nodes
        parent = [-1] * self.num_nodes  # arc along which flow will be pushed
        tree[s], tree[t] = _SOURCE, _SINK
        active: deque[int] = deque((s, t))
        orphans: deque[int] = deque()
        flow = 0.0

        def residual_to_grow(node: int, arc: int) -> float:
            # source tree grows along the arc, sink tree against it
            return cap[arc] if tree[node] == _SOURCE else cap[arc ^ 1]

        def rooted(node: int) -> bool:
            while node != s and node != t:
                arc = parent[node]
                if arc < 0:
                    return False
                node = head[arc ^ 1] if tree[node] == _SOURCE else head[arc]
            return True

        while True:
            bridge = -1
            while active:
                p = active[0]
                if tree[p] == _FREE:  # stale queue entry
                    active.popleft()
                    continue
                for arc in adj[p]:
                    if residual_to_grow(p, arc) <= 0.0:
                        continue
                    q = head[arc]
                    if tree[q] == _FREE:
                        tree[q] = tree[p]
                        parent[q] = arc if tree[p] == _SOURCE else arc ^ 1
                        active.append(q)
                    elif tree[q] != tree[p]:
                        bridge = arc if tree[p] == _SOURCE else arc ^ 1
                        break
                if bridge >= 0:
                    break
                active.popleft()
            if bridge < 0:
                break  # trees can no longer touch: flow is maximal

            flow += self._augment(bridge, tree, parent, orphans)
            self._adopt(tree, parent, active, orphans, rooted)
        return flow, self._source_side()

    def _augment(self, bridge: int, tree, parent, orphans) -> float:
        """Push the bottleneck along source-path + bridge + sink-path."""
        cap, head = self.cap, self.head
        s, t = self.source, self.sink
        path = [bridge]
        node = head[bridge ^ 1]  # source-side endpoint
        while node != s:
            arc = parent[node]
            path.append(arc)
            node = head[arc ^ 1]
        node = head[bridge]  # sink-side endpoint
        while node != t:
            arc = parent[node]
            path.append(arc)
            node = head[arc]
        bottleneck = min(cap[arc] for arc in path)
        for arc in path:
            cap[arc] -= bottleneck
            cap[arc ^ 1] += bottleneck
            if cap[arc] == 0.0 and arc != bridge:
                # the arc's child end loses its tree connection
                child = head[arc] if tree[head[arc]] == _SOURCE else head[arc ^ 1]
                parent[child] = -1
                orphans.append(child)
        return bottleneck

    def _adopt(self, tree, parent, active, orphans, rooted) -> None:
        cap, head, adj = self.cap, self.head, self.adj
        while orphans:
            o = orphans.popleft()
            side = tree[o]
            found = -1
            for arc in adj[o]:
                q = head[arc]
                if tree[q] != side:
                    continue
                # residual must run toward the orphan for a source tree,
                # away from it for a sink tree
                residual = cap[arc ^ 1] if side == _SOURCE else cap[arc]
                if residual > 0.0 and rooted(q):
                    found = arc ^ 1 if side == _SOURCE else arc
                    break
            if found >= 0:
                parent[o] = found
                continue
            for arc in adj[o]:
                q = head[arc]
                if tree[q] != side:
                    continue
                residual = cap[arc ^ 1] if side == _SOURCE else cap[arc]
                if residual > 0.0:
                    active.append(q)  # q may re-grow toward the freed node
                parent_arc = parent[q]
                if parent_arc >= 0:
                    attached = head[parent_arc ^ 1] if side == _SOURCE else head[parent_arc]
                    if attached == o:
                        parent[q] = -1
                        orphans.append(q)
            tree[o] = _FREE
            parent[o] = -1

    def _source_side(self) -> np.ndarray:
        cap, head, adj = self.cap, self.head, self.adj
        side = np.zeros(self.num_nodes, dtype=bool)
        side[self.source] = True
        queue = deque((self.source,))
        while queue:
            u = queue.popleft()
            for arc in adj[u]:
                v = head[arc]
                if not side[v] and cap[arc] > 0.0:
                    side[v] = True
                    queue.append(v)
        return side


# ---------------------------------------------------------------------------
# alpha-expansion


@dataclass
class ExpansionResult:
    labeling: np.ndarray
    energy: float
    moves: int
    converged: bool


def expansion_move(model: EnergyModel, labeling, alpha: int) -> tuple[np.ndarray, float]:
    """Best one-shot move where every node keeps its label or switches to alpha.

    Solved exactly as a minimum cut when every pairwise table is
    submodular; non-submodular tables are truncated first.  Returns the
    proposed labeling and its true energy (computed from the untruncated
    model, so callers can compare honestly).
    """
    x = np.asarray(labeling, dtype=np.int64).copy()
    n, num_labels = model.unary.shape
    if x.shape != (n,):
        raise ValidationError(f"labeling must have shape ({n},), got {x.shape}")
    if not (0 <= alpha < num_labels):
        raise ValidationError(f"alpha {alpha} out of range for {num_labels} labels")

    # binary costs: y = 0 keeps the current label, y = 1 switches to alpha
    cost_keep = model.unary[np.arange(n), x].copy()
    cost_switch = model.unary[:, alpha].copy()

    if model.pair_i.size:
        i, j = model.pair_i, model.pair_j
        arange = np.arange(i.size)
        phi = lambda s: pairwise_potential(s, model.beta)  # noqa: E731
        kk = phi(model.pair_scores[arange, x[i], x[j]])
        ks = phi(model.pair_scores[arange, x[i], np.full(i.size, alpha)])
        sk = phi(model.pair_scores[arange, np.full(i.size, alpha), x[j]])
        ss = phi(model.pair_scores[arange, np.full(i.size, alpha), np.full(i.size, alpha)])
        # submodularity requires kk + ss <= ks + sk; truncate kk when violated
        kk = np.minimum(kk, ks + sk - ss)
        # standard reduction: constant kk, node terms, one arc per pair
        np.add.at(cost_switch, i, sk - kk)
        np.add.at(cost_switch, j, ss - sk)
        pair_cap = np.maximum(ks + sk - kk - ss, 0.0)
    else:
        i = j = pair_cap = np.empty(0)

    shift = np.minimum(cost_keep, cost_switch)
    source_cap = cost_switch - shift  # cut when the node lands on the sink side
    sink_cap = cost_keep - shift

    s_node, t_node = n, n + 1
    net = FlowNetwork(n + 2, s_node, t_node)
    for v in range(n):
        if source_cap[v] > 0.0:
            net.add_arc(s_node, v, source_cap[v])
        if sink_cap[v] > 0.0:
            net.add_arc(v, t_node, sink_cap[v])
    for k in range(i.size) if model.pair_i.size else ():
        if pair_cap[k] > 0.0:
            net.add_arc(int(i[k]), int(j[k]), float(pair_cap[k]))
    _, source_side = net.max_flow()

    switch = ~source_side[:n]
    proposal = np.where(switch, alpha, x)
    return proposal, energy_of(model, proposal)


def initial_labeling(model: EnergyModel) -> np.ndarray:
    """Cheapest unary label per node; argmin breaks ties toward the lower label."""
    return model.unary.argmin(axis=1).astype(np.int64)


def alpha_expansion(
    model: EnergyModel,
    init=None,
    max_sweeps: int = 10,
) -> ExpansionResult:
    """Cycle expansion moves over all labels until no move improves.

    A move is accepted only on a strict decrease of the true energy, so the
    energy sequence is strictly decreasing and the loop terminates; a sweep
    in which every label fails to improve proves local optimality under
    single-label expansions.
    """
    if max_sweeps < 1:
        raise ValidationError(f"max_sweeps must be >= 1, got {max_sweeps}")
    x = initial_labeling(model) if init is None else np.asarray(init, dtype=np.int64).copy()
    energy = energy_of(model, x)
    moves = 0
    converged = False
    for _ in range(max_sweeps):
        improved = False
        for alpha in range(model.num_labels):
            proposal, proposed_energy = expansion_move(model, x, alpha)
            if proposed_energy < energy:
                x, energy = proposal, proposed_energy
                moves += 1
                improved = True
        if not improved:
            converged = True
            break
    return ExpansionResult(x, energy, moves, converged)
