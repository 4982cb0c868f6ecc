import numpy as np
import pytest
import scipy.sparse as sp

from ctxseg.simgraph import SimilarityGraph, build_knn_graph


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def random_connected_graph():
    """Factory: k-NN graph over random positive-ish features, keyed by seed."""

    def make(n, k=5, seed=0) -> SimilarityGraph:
        rng = np.random.default_rng(seed)
        features = rng.normal(size=(n, 6)) + 2.0  # shift keeps inner products positive
        features /= np.linalg.norm(features, axis=1, keepdims=True)
        return build_knn_graph(features, k=min(k, n - 1))

    return make


@pytest.fixture
def random_links():
    """Factory: random 0/1 sparse link matrix with no self-links."""

    def make(n, density=0.05, seed=0, symmetric=False) -> sp.csr_matrix:
        rng = np.random.default_rng(seed)
        n_links = max(1, int(round(density * n * n)))
        rows, cols = [], []
        while len(rows) < n_links:
            i, j = rng.integers(0, n, size=2)
            if i != j:
                rows.append(int(i))
                cols.append(int(j))
                if symmetric:
                    rows.append(int(j))
                    cols.append(int(i))
        mat = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        mat.data[:] = 1.0
        return mat

    return make
