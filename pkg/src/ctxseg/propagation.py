"""Two-stage propagation of context links over the similarity graph.

A link matrix ``P`` holds observed 0/1 links between labeled superpixels.
Scores spread in two passes over the normalized operator ``L``: first every
nonzero row of ``P`` diffuses (rows of unlabeled superpixels are zero and
stay zero), then every column of the intermediate result diffuses the same
way.  Each pass iterates

    h(t+1) = mu * L @ h(t) + (1 - mu) * y,      h(0) = 0

whose fixed point is ``(1 - mu) * (I - mu L)^{-1} y``; the two passes
together therefore equal ``(1-mu)^2 (I - mu L)^{-1} P (I - mu L)^{-1}``.
The ``direct`` solver computes that fixed point with one sparse LU
factorization shared across all right-hand sides; the ``iterative`` solver
runs the update until the largest entry change drops to ``tol``.
``mu = 0`` is the no-diffusion limit: predictions equal ``P`` exactly.

Score matrices serialize to a directory-style binary format: magic
``CTXS``, u32 matrix count, then per matrix a header ``(i32 label_a,
i32 label_b, u32 n, u32 nnz)`` followed by ``(u32 row, u32 col, f64 value)``
records sorted by row then column.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ParseError, ValidationError
from .context import LinkMatrix
from .simgraph import SimilarityGraph

SCORES_MAGIC = b"CTXS"


@dataclass(frozen=True)
class PropagationConfig:
    mu: float = 0.99
    tol: float = 1e-6
    max_iter: int = 1000
    solver: str = "direct"
    prune_eps: float = 1e-8

    def validate(self) -> None:
        # mu = 0 is allowed as the exact no-diffusion limit; mu = 1 would
        # erase the retained initial scores entirely.
        if not (0.0 <= self.mu < 1.0):
            raise ValidationError(f"mu must satisfy 0 <= mu < 1, got {self.mu}")
        if not (self.tol > 0.0):
            raise ValidationError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.solver not in ("iterative", "direct"):
            raise ValidationError(f"solver must be 'iterative' or 'direct', got '{self.solver}'")
        if self.prune_eps < 0.0:
            raise ValidationError(f"prune_eps must be >= 0, got {self.prune_eps}")


class _Diffuser:
    """Applies ``Y -> (1 - mu)(I - mu L)^{-1} Y`` column by column.

    The LU factorization (direct solver) is computed lazily and reused for
    every right-hand side of the run.
    """

    def __init__(self, graph: SimilarityGraph, cfg: PropagationConfig):
        cfg.validate()
        self.graph = graph
        self.cfg = cfg
        self._lu = None

    def _factor(self):
        if self._lu is None:
            n = self.graph.n
            system = sparse.identity(n, format="csc") - self.cfg.mu * self.graph.operator
            self._lu = splu(system.tocsc())
        return self._lu

    def diffuse(self, y: np.ndarray) -> tuple[np.ndarray, bool]:
        """Returns (scores, converged); ``y`` may be a vector or a column stack."""
        cfg = self.cfg
        if cfg.mu == 0.0:
            return y.astype(np.float64, copy=True), True
        if cfg.solver == "direct":
            out = (1.0 - cfg.mu) * self._factor().solve(np.asarray(y, dtype=np.float64))
            return np.maximum(out, 0.0, out=out), True
        operator = self.graph.operator
        keep = (1.0 - cfg.mu) * np.asarray(y, dtype=np.float64)
        h = np.zeros_like(keep)
        for _ in range(cfg.max_iter):
            nxt = cfg.mu * (operator @ h) + keep
            delta = float(np.max(np.abs(nxt - h)))
            h = nxt
            if delta <= cfg.tol:
                return h, True
        return h, False


def propagate_labels(graph: SimilarityGraph, y, cfg: PropagationConfig) -> tuple[np.ndarray, bool]:
    """Diffuse an initial score vector over the graph.

    Returns ``(scores, converged)``.  The direct solver always reports
    convergence; the iterative solver reports whether the update dropped to
    ``tol`` within ``max_iter`` sweeps.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (graph.n,):
        raise ValidationError(f"expected a vector of length {graph.n}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValidationError("initial scores contain non-finite values")
    return _Diffuser(graph, cfg).diffuse(y)


@dataclass
class LinkPrediction:
    """Dense-in, sparse-out result of one two-stage link propagation."""

    label_pair: tuple[int, int]
    scores: sparse.csr_matrix
    stage_converged: tuple[bool, bool]


def predict_links(
    graph: SimilarityGraph,
    links: LinkMatrix,
    cfg: PropagationConfig,
    rows=None,
) -> LinkPrediction:
    """Two-stage propagation of one link matrix.

    Stage 1 diffuses the nonzero rows of ``P`` (the remaining rows are zero
    vectors, which diffuse to zero exactly, so they are skipped); stage 2
    diffuses every column of the stage-1 result.  ``rows`` overrides the
    stage-1 row set, which is useful for checking that the restriction is
    lossless.  Entries below ``prune_eps`` are dropped from the result.
    """
    cfg.validate()
    return _predict(_Diffuser(graph, cfg), links, rows)


def _predict(diffuser: _Diffuser, links: LinkMatrix, rows=None) -> LinkPrediction:
    graph, cfg = diffuser.graph, diffuser.cfg
    p = links.matrix.tocsr()
    if p.shape != (graph.n, graph.n):
        raise ValidationError(f"link matrix shape {p.shape} does not match graph n={graph.n}")
    if cfg.mu == 0.0:
        scores = p.astype(np.float64)
        return LinkPrediction(links.label_pair, _prune(scores, cfg.prune_eps), (True, True))
    if rows is None:
        rows = np.unique(p.nonzero()[0])
    else:
        rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        empty = sparse.csr_matrix((graph.n, graph.n))
        return LinkPrediction(links.label_pair, empty, (True, True))

    # Stage 1: diffuse each retained row; work with columns so one call
    # handles the whole stack.
    row_block, ok1 = diffuser.diffuse(p[rows, :].toarray().T)
    stage1_rows = row_block.T  # (len(rows), n)

    if cfg.solver == "direct":
        # (1-mu)(I-mu L)^{-1} restricted to the populated rows: diffusing the
        # indicator columns once gives the column basis, and the full result
        # is its product with the stage-1 rows.
        basis = np.zeros((graph.n, rows.size))
        basis[rows, np.arange(rows.size)] = 1.0
        cols, ok2 = diffuser.diffuse(basis)
        full = cols @ stage1_rows
        np.maximum(full, 0.0, out=full)
    else:
        stage1_full = np.zeros((graph.n, graph.n))
        stage1_full[rows, :] = stage1_rows
        full, ok2 = diffuser.diffuse(stage1_full)
    return LinkPrediction(links.label_pair, _prune(full, cfg.prune_eps), (ok1, ok2))


def _prune(scores, eps: float) -> sparse.csr_matrix:
    if sparse.issparse(scores):
        scores = scores.copy()
        scores.data[np.abs(scores.data) < eps] = 0.0
    else:
        scores = np.where(np.abs(scores) < eps, 0.0, scores)
    out = sparse.csr_matrix(scores)
    out.eliminate_zeros()
    return out


@dataclass
class ContextScores:
    """Propagated (and optionally max-normalized) scores per label pair."""

    per_pair: dict[tuple[int, int], sparse.csr_matrix]
    non_converged: list[tuple[tuple[int, int], int]]

    @property
    def converged(self) -> bool:
        return not self.non_converged


def compute_context_scores(
    graph: SimilarityGraph,
    link_matrices,
    cfg: PropagationConfig,
    normalize: bool = True,
) -> ContextScores:
    """Run two-stage prediction for every link matrix.

    With ``normalize`` each score matrix is scaled by its maximum entry so
    scores land in [0, 1]; matrices that are all zero stay zero.  Label
    pairs whose stage hit the iteration cap are reported in
    ``non_converged`` as (label_pair, stage index).
    """
    cfg.validate()
    diffuser = _Diffuser(graph, cfg)
    per_pair = {}
    non_converged = []
    for links in link_matrices:
        pred = _predict(diffuser, links)
        mat = pred.scores
        if normalize and mat.nnz:
            top = float(mat.data.max())
            if top > 0.0:
                mat = mat.multiply(1.0 / top).tocsr()
        per_pair[links.label_pair] = mat
        for stage, ok in enumerate(pred.stage_converged, start=1):
            if not ok:
                non_converged.append((links.label_pair, stage))
    return ContextScores(per_pair, non_converged)


def write_scores(scores: ContextScores, path) -> None:
    """Serialize per-pair score matrices (values kept at full f64 precision)."""
    chunks = [SCORES_MAGIC, struct.pack("<I", len(scores.per_pair))]
    for pair in sorted(scores.per_pair):
        mat = scores.per_pair[pair].tocoo()
        order = np.lexsort((mat.col, mat.row))
        chunks.append(struct.pack("<iiII", pair[0], pair[1], mat.shape[0], mat.nnz))
        rec = np.empty(mat.nnz, dtype=_SCORE_DTYPE)
        rec["row"] = mat.row[order]
        rec["col"] = mat.col[order]
        rec["val"] = mat.data[order]
        chunks.append(rec.tobytes())
    Path(path).write_bytes(b"".join(chunks))


_SCORE_DTYPE = np.dtype([("row", "<u4"), ("col", "<u4"), ("val", "<f8")])


def read_scores(path) -> ContextScores:
    raw = Path(path).read_bytes()
    if raw[:4] != SCORES_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise ParseError(f"{path}: header truncated at byte {len(raw)}")
    (count,) = struct.unpack_from("<I", raw, 4)
    offset = 8
    per_pair = {}
    for _ in range(count):
        if len(raw) < offset + 16:
            raise ParseError(f"{path}: matrix header truncated at byte {len(raw)}")
        la, lb, n, nnz = struct.unpack_from("<iiII", raw, offset)
        offset += 16
        end = offset + 16 * nnz
        if len(raw) < end:
            raise ParseError(f"{path}: matrix payload truncated at byte {len(raw)}")
        rec = np.frombuffer(raw, dtype=_SCORE_DTYPE, count=nnz, offset=offset)
        offset = end
        if nnz and (rec["row"].max() >= n or rec["col"].max() >= n):
            raise ParseError(f"{path}: score index out of range (n={n})")
        if not np.all(np.isfinite(rec["val"])):
            raise ParseError(f"{path}: non-finite score value")
        mat = sparse.coo_matrix(
            (rec["val"].copy(), (rec["row"].astype(np.int64), rec["col"].astype(np.int64))),
            shape=(n, n),
        ).tocsr()
        per_pair[(la, lb)] = mat
    if offset != len(raw):
        raise ParseError(f"{path}: {len(raw) - offset} trailing bytes at byte {offset}")
    return ContextScores(per_pair, [])
