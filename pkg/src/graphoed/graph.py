"""k-nearest-neighbor graph, graph Laplacian, and shifted-power regularizer.

The Laplacian of a symmetrized kNN graph carries Gaussian edge weights
exp(-d^2 / gamma) with gamma set to the median squared distance over the
retained edges.  The regularizer is the integer power (Laplacian + tau*I)^eta,
assembled explicitly by sparse products so it can be factored once and reused.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import DataError

#: rows per block in the brute-force distance sweep; bounds peak memory at
#: roughly block * n * 8 bytes
_BLOCK_ROWS = 1024


@dataclass
class NeighborGraph:
    """Symmetrized kNN graph: per-node sorted neighbor lists plus kernel width."""

    n: int
    neighbors: list[np.ndarray]
    sq_dists: list[np.ndarray]
    gamma: float

    def edges(self):
        """Yield each undirected edge once as (i, j, squared_distance), i < j."""
        for i in range(self.n):
            for j, d2 in zip(self.neighbors[i], self.sq_dists[i]):
                if i < j:
                    yield i, int(j), float(d2)

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def max_degree(self) -> int:
        return max(len(nb) for nb in self.neighbors)


def build_knn_graph(dataset_or_features, k: int) -> NeighborGraph:
    """Connect each point to its k nearest Euclidean neighbors, then symmetrize
    by union.

    Distance ties break toward the lower index, which makes construction
    deterministic.  Duplicate points (distance zero) are legal neighbors.
    """
    features = getattr(dataset_or_features, "features", dataset_or_features)
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k >= n:
        raise DataError(f"k must be < n, got k={k}, n={n}")

    src = np.repeat(np.arange(n), k)
    dst = np.empty(n * k, dtype=np.int64)
    d2s = np.empty(n * k, dtype=np.float64)
    block_rows = max(1, min(_BLOCK_ROWS, int(2e8 / (8 * n))))
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        block = cdist(features[start:stop], features, "sqeuclidean")
        for r in range(stop - start):
            i = start + r
            row = block[r]
            # preselect everything within the (k+1)-th smallest distance, then
            # order ties by (distance, index); drop self, keep first k
            kth = np.partition(row, k)[k]
            cand_all = np.flatnonzero(row <= kth)
            order = cand_all[np.lexsort((cand_all, row[cand_all]))]
            cand = order[: k + 1]
            cand = cand[cand != i]
            picked = cand[:k]
            sl = slice(i * k, i * k + k)
            dst[sl] = picked
            d2s[sl] = row[picked]

    # union symmetrization: dedupe undirected pairs, keeping one distance
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    keys = lo * n + hi
    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    first = np.ones(len(keys_sorted), dtype=bool)
    first[1:] = keys_sorted[1:] != keys_sorted[:-1]
    uniq = order[first]
    edge_lo, edge_hi, edge_d2 = lo[uniq], hi[uniq], d2s[uniq]

    median = float(np.median(edge_d2)) if len(edge_d2) else 0.0
    gamma = median if median > 0.0 else 1.0  # all-coincident fallback; exp(0)=1 either way

    both_i = np.concatenate([edge_lo, edge_hi])
    both_j = np.concatenate([edge_hi, edge_lo])
    both_d = np.concatenate([edge_d2, edge_d2])
    order = np.lexsort((both_j, both_i))
    both_i, both_j, both_d = both_i[order], both_j[order], both_d[order]
    counts = np.bincount(both_i, minlength=n)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    neighbors = [both_j[offsets[i] : offsets[i + 1]] for i in range(n)]
    sq_dists = [both_d[offsets[i] : offsets[i + 1]] for i in range(n)]
    return NeighborGraph(n=n, neighbors=neighbors, sq_dists=sq_dists, gamma=gamma)


def build_laplacian(graph: NeighborGraph) -> sp.csr_array:
    """Graph Laplacian with off-diagonal -exp(-d^2/gamma) and zero row sums."""
    rows, cols, vals = [], [], []
    for i in range(graph.n):
        rows.append(np.full(len(graph.neighbors[i]), i, dtype=np.int64))
        cols.append(graph.neighbors[i])
        vals.append(-np.exp(-graph.sq_dists[i] / graph.gamma))
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    off = sp.coo_array((vals, (rows, cols)), shape=(graph.n, graph.n)).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    lap = (off + sp.diags_array(diag, format="csr")).tocsr()
    lap.sort_indices()
    return lap


def build_regularizer(laplacian: sp.csr_array, tau: float, eta: int) -> sp.csr_array:
    """(Laplacian + tau*I)^eta, symmetric positive definite with smallest
    eigenvalue at least tau^eta."""
    if tau <= 0:
        raise DataError(f"tau must be positive, got {tau}")
    if not float(eta).is_integer() or eta <= 0:
        raise DataError(f"eta must be a positive integer, got {eta}")
    eta = int(eta)
    if eta > 3:
        warnings.warn(
            f"eta={eta} causes heavy fill-in in the sparse power", stacklevel=2
        )
    n = laplacian.shape[0]
    shifted = (laplacian + tau * sp.eye_array(n, format="csr")).tocsr()
    result = shifted
    for _ in range(eta - 1):
        result = result @ shifted
    # sparse products can be asymmetric in the last ulp; restore exact symmetry
    result = (0.5 * (result + result.T)).tocsr()
    result.sort_indices()
    return result


def save_matrix(path, matrix):
    """Matrix Market coordinate text format, for debugging."""
    scipy.io.mmwrite(str(path), sp.coo_array(matrix))


def load_matrix(path) -> sp.csr_array:
    loaded = scipy.io.mmread(str(path))
    return sp.csr_array(loaded)
