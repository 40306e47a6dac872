"""Choosing k for the kNN graph by the first cluster-count plateau."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import NoPlateau
from .knn import knn_graph
from .louvain import louvain


class NoPlateauWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SweepPoint:
    k: int
    n_clusters: int
    modularity: float


def sweep_ks(k_range: tuple[int, int], step: int, n: int) -> list[int]:
    if step < 1:
        raise ValueError("step must be >= 1")
    lo, hi = max(1, k_range[0]), min(k_range[1], n - 1)
    if lo > hi:
        raise ValueError(f"k range {k_range} is empty for n={n}")
    return list(range(lo, hi + 1, step))


def k_sweep(x, ks, metric: str = "l2", weight_mode: str = "unit", seed: int = 0) -> list[SweepPoint]:
    curve = []
    for k in ks:
        c = louvain(knn_graph(x, k, metric, weight_mode), seed=seed)
        curve.append(SweepPoint(int(k), c.n_clusters, c.modularity))
    return curve


def _runs(curve: list[SweepPoint]) -> list[tuple[int, int]]:
    """Maximal runs of equal cluster count as ``(first, last)`` positions."""
    runs, start = [], 0
    for i in range(1, len(curve) + 1):
        if i == len(curve) or curve[i].n_clusters != curve[start].n_clusters:
            runs.append((start, i - 1))
            start = i
    return runs


def pick_plateau(curve: list[SweepPoint], plateau_span: int = 100, strict: bool = False) -> int:
    """Midpoint k of the first run whose k-span is at least ``plateau_span``.

    The midpoint is snapped to the nearest sampled k (lower on ties). Without a
    qualifying run the longest run is used and a warning is emitted, or
    :class:`NoPlateau` is raised when ``strict``.
    """
    if not curve:
        raise ValueError("empty sweep curve")
    runs = _runs(curve)
    chosen = next((r for r in runs if curve[r[1]].k - curve[r[0]].k >= plateau_span), None)
    if chosen is None:
        if strict:
            raise NoPlateau(f"no run of constant cluster count spans {plateau_span}")
        chosen = max(runs, key=lambda r: curve[r[1]].k - curve[r[0]].k)
        warnings.warn(f"no plateau spanning {plateau_span}; using the longest run "
                      f"k={curve[chosen[0]].k}..{curve[chosen[1]].k}", NoPlateauWarning, stacklevel=2)
    ks = np.array([p.k for p in curve[chosen[0]:chosen[1] + 1]])
    mid = (ks[0] + ks[-1]) / 2
    return int(ks[np.argmin(np.abs(ks - mid))])


def select_k_opt(x, k_range: tuple[int, int] = (5, 2500), step: int = 5, plateau_span: int = 100,
                 metric: str = "l2", weight_mode: str = "unit", seed: int = 0):
    """Sweep k, then pick the plateau midpoint. Returns ``(k_opt, curve)``."""
    n = getattr(x, "n", None) or len(x)
    curve = k_sweep(x, sweep_ks(k_range, step, n), metric, weight_mode, seed)
    return pick_plateau(curve, plateau_span), curve


def write_sweep_csv(path: str | Path, curve: list[SweepPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "n_clusters", "modularity"])
        for p in curve:
            w.writerow([p.k, p.n_clusters, f"{p.modularity:.12g}"])


def read_sweep_csv(path: str | Path) -> list[SweepPoint]:
    with open(path, newline="") as fh:
        return [SweepPoint(int(r["k"]), int(r["n_clusters"]), float(r["modularity"])) for r in csv.DictReader(fh)]
