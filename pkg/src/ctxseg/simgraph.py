"""k-nearest-neighbor similarity graph over superpixel features.

Each node links to its ``k`` strongest neighbors by inner product (clamped
at zero); the edge set is symmetrized by union.  The diffusion operator is
the symmetric normalization ``D^{-1/2} W D^{-1/2}``, whose spectral radius
never exceeds 1 — the property the propagation stage relies on.

Graphs serialize to a small binary format: magic ``CTXG``, two
little-endian u32 (node count, edge count), then one ``(u32 i, u32 j,
f32 w)`` record per undirected edge with ``i < j``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ParseError, ValidationError

GRAPH_MAGIC = b"CTXG"


@dataclass
class SimilarityGraph:
    """Symmetric weighted graph plus its normalized diffusion operator."""

    n: int
    weights: sparse.csr_matrix
    degrees: np.ndarray
    operator: sparse.csr_matrix


def _finalize(weights: sparse.csr_matrix) -> SimilarityGraph:
    weights = weights.tocsr()
    weights.eliminate_zeros()
    n = weights.shape[0]
    degrees = np.asarray(weights.sum(axis=1)).ravel()
    if np.any(degrees <= 0.0):
        bad = int(np.flatnonzero(degrees <= 0.0)[0])
        raise ValidationError(f"node {bad} has no positive-weight edge")
    inv_sqrt = 1.0 / np.sqrt(degrees)
    operator = weights.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :]).tocsr()
    return SimilarityGraph(n, weights, degrees, operator)


def build_knn_graph(features, k: int = 20) -> SimilarityGraph:
    """Link every node to its ``k`` strongest inner-product neighbors.

    Affinities are ``max(<f_i, f_j>, 0)``; self-links are excluded and ties
    at the k-th rank go to the lower node index.  The union of the directed
    k-NN picks gives the undirected edge set.  Raises when a node is left
    with no positive-weight edge, since the normalized operator would be
    undefined there.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValidationError(f"need a 2-d feature matrix with >= 2 rows, got shape {f.shape}")
    n = f.shape[0]
    if not (1 <= k < n):
        raise ValidationError(f"k must satisfy 1 <= k < n={n}, got {k}")
    if not np.all(np.isfinite(f)):
        raise ValidationError("features contain non-finite values")

    sims = f @ f.T
    np.fill_diagonal(sims, -np.inf)
    # Stable argsort on the negated similarities: equal affinities keep
    # ascending index order, i.e. ties go to the lower node index.
    nbrs = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    vals = np.maximum(sims[rows, cols], 0.0)
    directed = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return _finalize(directed.maximum(directed.T))


def operator_apply(graph: SimilarityGraph, vec) -> np.ndarray:
    """Multiply the normalized operator with a length-n vector."""
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (graph.n,):
        raise ValidationError(f"expected a vector of length {graph.n}, got shape {v.shape}")
    return graph.operator @ v


_EDGE_DTYPE = np.dtype([("i", "<u4"), ("j", "<u4"), ("w", "<f4")])


def write_graph(graph: SimilarityGraph, path) -> None:
    """Serialize to the binary edge-list format (weights rounded to f32)."""
    upper = sparse.triu(graph.weights, k=1).tocoo()
    rec = np.empty(upper.nnz, dtype=_EDGE_DTYPE)
    order = np.lexsort((upper.col, upper.row))
    rec["i"] = upper.row[order]
    rec["j"] = upper.col[order]
    rec["w"] = upper.data[order]
    with open(path, "wb") as f:
        f.write(GRAPH_MAGIC)
        f.write(struct.pack("<II", graph.n, upper.nnz))
        f.write(rec.tobytes())


def read_graph(path) -> SimilarityGraph:
    """Read a serialized graph and rebuild degrees and the operator."""
    raw = Path(path).read_bytes()
    if raw[:4] != GRAPH_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise ParseError(f"{path}: header truncated at byte {len(raw)}")
    n, nnz = struct.unpack_from("<II", raw, 4)
    expected = 12 + 12 * nnz
    if len(raw) != expected:
        raise ParseError(f"{path}: file is {len(raw)} bytes, expected {expected} for {nnz} edges")
    rec = np.frombuffer(raw, dtype=_EDGE_DTYPE, offset=12)
    i = rec["i"].astype(np.int64)
    j = rec["j"].astype(np.int64)
    w = rec["w"].astype(np.float64)
    if nnz and (i.max() >= n or j.max() >= n):
        raise ParseError(f"{path}: edge endpoint out of range (n={n})")
    if np.any(i >= j):
        bad = int(np.flatnonzero(i >= j)[0])
        raise ParseError(f"{path}: edge {bad} not in canonical i < j order")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ParseError(f"{path}: negative or non-finite edge weight")
    if np.unique(i * n + j).size != nnz:
        raise ParseError(f"{path}: duplicate edge record")
    upper = sparse.coo_matrix((w, (i, j)), shape=(n, n))
    return _finalize((upper + upper.T).tocsr())
