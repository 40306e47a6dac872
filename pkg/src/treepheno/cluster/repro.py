"""Reference clustering and its reproducibility variants.

Variants, each compared to the reference on the subjects both cover:

1. re-clustering on subsets that each leave out one fifth of the subjects
2. fixed k over a grid (agreement-vs-k curve)
3. cosine instead of L2 distance in the kNN graph
4. a smaller PCA reduction
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InsufficientData
from ..evalmetrics import adjusted_rand_index, rand_index
from .knn import knn_graph
from .ksweep import select_k_opt, sweep_ks
from .louvain import Clustering, louvain
from .pca import FeatureMatrix, pca_reduce

log = logging.getLogger(__name__)


@dataclass
class ClusterConfig:
    pca_dim: int | None = 2048
    pca_variance: float | None = None
    alt_pca_dim: int | None = 1024
    alt_pca_variance: float | None = None
    k: int | None = None  # None: choose by plateau
    k_range: tuple[int, int] = (5, 2500)
    step: int = 5
    plateau_span: int = 100
    metric: str = "l2"
    alt_metric: str = "cosine"
    weight_mode: str = "unit"
    subsets: int = 5
    repro_k_values: list[int] | None = None  # None: the sweep grid

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_range"] = list(self.k_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        d = dict(d)
        if "k_range" in d:
            d["k_range"] = tuple(d["k_range"])
        return cls(**d)


@dataclass
class ClusterRun:
    clustering: Clustering
    ids: list[str]
    k: int
    pca_components: int
    variance_explained: float
    curve: list | None = None


def reduce(x: FeatureMatrix, dim: int | None, variance: float | None) -> FeatureMatrix:
    if variance is not None:
        return pca_reduce(x, variance_target=variance).features
    return pca_reduce(x, target_dim=dim).features


def cluster_features(x: FeatureMatrix, cfg: ClusterConfig, seed: int = 0, k: int | None = None,
                     metric: str | None = None, alt_dim: bool = False) -> ClusterRun:
    """PCA, kNN graph and Louvain; k from the plateau rule unless fixed."""
    if alt_dim:
        reduced = reduce(x, cfg.alt_pca_dim, cfg.alt_pca_variance)
    else:
        reduced = reduce(x, cfg.pca_dim, cfg.pca_variance)
    metric = metric or cfg.metric
    k = k if k is not None else cfg.k
    curve = None
    if k is None:
        k, curve = select_k_opt(reduced, cfg.k_range, cfg.step, cfg.plateau_span, metric,
                                cfg.weight_mode, seed)
    c = louvain(knn_graph(reduced, k, metric, cfg.weight_mode), seed=seed)
    c.ids = list(x.ids)
    c.metric = metric
    return ClusterRun(c, list(x.ids), int(k), reduced.d,
                      float(reduced.provenance.get("variance_explained", 1.0)), curve)


def _compare(ref: ClusterRun, other: ClusterRun) -> dict:
    pos = {sid: i for i, sid in enumerate(ref.ids)}
    rows = np.array([pos[s] for s in other.ids])
    a, b = ref.clustering.labels[rows], other.clustering.labels
    return {"ri": rand_index(a, b), "ari": adjusted_rand_index(a, b), "n": len(rows),
            "k": other.k, "n_clusters": other.clustering.n_clusters}


def subset_rows(n: int, n_subsets: int, seed: int) -> list[np.ndarray]:
    """Each subset leaves out one of ``n_subsets`` random, equal parts."""
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, n_subsets)
    return [np.sort(np.concatenate([p for j, p in enumerate(parts) if j != s])) for s in range(n_subsets)]


def reproducibility_suite(x: FeatureMatrix, reference: ClusterRun, cfg: ClusterConfig,
                          seed: int = 0) -> dict:
    if x.n < 50:
        raise InsufficientData(f"reproducibility suite needs n >= 50, got {x.n}")
    report: dict = {"reference": {"k": reference.k, "n_clusters": reference.clustering.n_clusters,
                                  "pca_components": reference.pca_components,
                                  "variance_explained": reference.variance_explained}}

    subsets = []
    for s, rows in enumerate(subset_rows(x.n, cfg.subsets, seed)):
        run = cluster_features(x.subset(rows), cfg, seed)
        subsets.append({"subset": s, **_compare(reference, run)})
        log.info("subset %d: k=%d ARI=%.3f", s, run.k, subsets[-1]["ari"])
    report["subsets"] = subsets
    report["subsets_mean_ri"] = float(np.mean([r["ri"] for r in subsets]))
    report["subsets_mean_ari"] = float(np.mean([r["ari"] for r in subsets]))

    ks = cfg.repro_k_values or sweep_ks(cfg.k_range, cfg.step, x.n)
    report["k_curve"] = [_compare(reference, cluster_features(x, cfg, seed, k=k)) for k in ks]
    report["alt_metric"] = {"metric": cfg.alt_metric,
                            **_compare(reference, cluster_features(x, cfg, seed, k=reference.k,
                                                                   metric=cfg.alt_metric))}
    alt = cluster_features(x, cfg, seed, k=reference.k, alt_dim=True)
    report["alt_dim"] = {"pca_components": alt.pca_components,
                         "variance_explained": alt.variance_explained, **_compare(reference, alt)}
    return report


__all__ = ["ClusterConfig", "ClusterRun", "cluster_features", "reproducibility_suite", "subset_rows"]
