from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from ..errors import InvalidK

METRICS = ("l2", "cosine")
WEIGHT_MODES = ("unit", "distance", "gaussian")


@dataclass
class KnnGraph:
    """Symmetric weighted adjacency without self loops."""

    adjacency: sparse.csr_matrix
    k: int
    metric: str
    weight_mode: str

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> set[tuple[int, int]]:
        coo = sparse.triu(self.adjacency, k=1).tocoo()
        # explicit zeros (distance mode, duplicate points) are still edges
        return {(int(i), int(j)) for i, j in zip(coo.row, coo.col)}

    def degrees(self) -> np.ndarray:
        a = self.adjacency.copy()
        a.data[:] = 1
        return np.asarray(a.sum(axis=1)).ravel().astype(int)


def pairwise_distances(x: np.ndarray, metric: str = "l2") -> np.ndarray:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        if (norms == 0).any():
            raise ValueError("cosine distance undefined for zero vectors")
        return cdist(x, x, metric="cosine")
    return cdist(x, x, metric="euclidean")


def nearest_neighbors(dist: np.ndarray, k: int) -> np.ndarray:
    """``(n, k)`` neighbor indices per row, self excluded, ties to the lower index."""
    n = dist.shape[0]
    if not 1 <= k < n:
        raise InvalidK(f"k must satisfy 1 <= k < n ({n}), got {k}")
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    # stable sort keeps equal distances in index order
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def knn_graph(x, k: int, metric: str = "l2", weight_mode: str = "unit") -> KnnGraph:
    """Union-symmetrized kNN graph over the rows of ``x``.

    Weights: ``unit`` 1; ``distance`` the raw distance; ``gaussian``
    ``exp(-d**2 / sigma**2)`` with sigma the mean of all directed kNN distances.
    """
    if weight_mode not in WEIGHT_MODES:
        raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
    values = getattr(x, "values", x)
    values = np.asarray(values, dtype=np.float64)
    dist = pairwise_distances(values, metric)
    nbr = nearest_neighbors(dist, k)
    n = len(values)
    rows = np.repeat(np.arange(n), k)
    cols = nbr.ravel()
    # union: an edge exists if either endpoint lists the other
    mask = np.zeros((n, n), dtype=bool)
    mask[rows, cols] = True
    mask |= mask.T
    i, j = np.nonzero(mask)
    d = dist[i, j]
    if weight_mode == "unit":
        w = np.ones_like(d)
    elif weight_mode == "distance":
        w = d
    else:
        sigma = float(dist[rows, cols].mean())
        w = np.exp(-(d ** 2) / sigma ** 2) if sigma > 0 else np.ones_like(d)
    adj = sparse.csr_matrix((w, (i, j)), shape=(n, n))
    # keep explicit zeros so zero-distance edges survive in the structure
    adj.sort_indices()
    return KnnGraph(adj, int(k), metric, weight_mode)
