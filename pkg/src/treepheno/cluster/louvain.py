"""Louvain modularity maximization (resolution 1)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..errors import EmptyGraph

GAIN_TOL = 1e-12


@dataclass
class Clustering:
    labels: np.ndarray
    k_used: int | None = None
    seed: int | None = None
    modularity: float = 0.0
    metric: str | None = None
    level_modularity: list[float] = field(default_factory=list)
    ids: list[str] | None = None

    @property
    def n_clusters(self) -> int:
        return int(len(np.unique(self.labels)))


def canonical_labels(labels) -> np.ndarray:
    """Renumber so labels appear in order 0, 1, 2, ... by first occurrence."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv.ravel()]


def modularity(adjacency, labels) -> float:
    """Newman modularity; ``adjacency`` symmetric, self-loop weight on the diagonal."""
    a = sparse.csr_matrix(adjacency)
    two_m = float(a.sum())
    if two_m == 0:
        return 0.0
    labels = canonical_labels(labels)
    h = sparse.csr_matrix((np.ones(len(labels)), (np.arange(len(labels)), labels)))
    inner = h.T @ a @ h
    within = inner.diagonal()
    tot = np.asarray(inner.sum(axis=1)).ravel()
    return float(np.sum(within / two_m - (tot / two_m) ** 2))


def _local_moves(a: sparse.csr_matrix, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    n = a.shape[0]
    k = np.asarray(a.sum(axis=1)).ravel()
    two_m = k.sum()
    m = two_m / 2
    comm = np.arange(n)
    tot = k.copy()
    order = rng.permutation(n)
    indptr, indices, data = a.indptr, a.indices, a.data
    moved_any = False
    while True:
        moves = 0
        for i in order:
            nb = indices[indptr[i]:indptr[i + 1]]
            w = data[indptr[i]:indptr[i + 1]]
            keep = nb != i
            nb, w = nb[keep], w[keep]
            ci = comm[i]
            ki = k[i]
            tot[ci] -= ki
            if len(nb):
                uc, inv = np.unique(comm[nb], return_inverse=True)
                kin = np.bincount(inv.ravel(), weights=w, minlength=len(uc))
                gains = kin - tot[uc] * ki / two_m
                own = np.flatnonzero(uc == ci)
                own_gain = gains[own[0]] if len(own) else -tot[ci] * ki / two_m
                j = int(np.argmax(gains))
                if (gains[j] - own_gain) / m > GAIN_TOL:
                    ci = uc[j]
                    moves += 1
            comm[i] = ci
            tot[ci] += ki
        if moves == 0:
            break
        moved_any = True
    return canonical_labels(comm), moved_any


def louvain(graph, seed: int = 0, max_levels: int = 100) -> Clustering:
    """Greedy two-phase Louvain on a :class:`KnnGraph` or a sparse adjacency.

    Node visit order is a seeded shuffle at every level, so results are a pure
    function of the graph and ``seed``.
    """
    a = getattr(graph, "adjacency", graph)
    a = sparse.csr_matrix(a, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        raise EmptyGraph("graph has no nodes")
    k_used = getattr(graph, "k", None)
    metric = getattr(graph, "metric", None)
    labels = np.arange(n)
    if a.sum() == 0:
        return Clustering(labels, k_used, seed, 0.0, metric, [0.0])
    rng = np.random.default_rng(seed)
    level_q = [modularity(a, labels)]
    current = a
    for _ in range(max_levels):
        comm, moved = _local_moves(current, rng)
        if not moved:
            break
        labels = comm[labels]
        h = sparse.csr_matrix((np.ones(len(comm)), (np.arange(len(comm)), comm)))
        current = (h.T @ current @ h).tocsr()
        level_q.append(modularity(a, labels))
        if current.shape[0] == 1:
            break
    labels = canonical_labels(labels)
    return Clustering(labels, k_used, seed, level_q[-1], metric, level_q)
