"""Reconstruction metrics (Dice, FPR, tree length, centerline leakage) and
pair-counting cluster agreement (Rand index, adjusted Rand index)."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np

from .errors import EmptyReference, SizeMismatch


@dataclass
class ReconReport:
    dice: float
    fpr: float
    tl: float
    cl: float
    averaged_over_views: bool = False


@dataclass
class ClusterAgreement:
    ri: float
    ari: float


def _binary(a) -> np.ndarray:
    return np.asarray(a).astype(bool)


def recon_metrics(m, m_hat, s, s_hat) -> ReconReport:
    """``m``/``m_hat``: reference and predicted masks; ``s``/``s_hat``: their skeletons.

    TL = |S ∩ M̂| / |S|, CL = |Ŝ \\ M| / |S|, FPR = |M̂ \\ M| / |M|,
    DSC = 2 |M̂ ∩ M| / (|M| + |M̂|).
    """
    m, m_hat, s, s_hat = (_binary(a) for a in (m, m_hat, s, s_hat))
    if not (m.shape == m_hat.shape == s.shape == s_hat.shape):
        raise SizeMismatch("all images must share one shape")
    nm, ns = int(m.sum()), int(s.sum())
    if nm == 0 or ns == 0:
        raise EmptyReference("reference mask or skeleton is empty")
    n_hat = int(m_hat.sum())
    return ReconReport(
        dice=2 * int((m & m_hat).sum()) / (nm + n_hat),
        fpr=int((m_hat & ~m).sum()) / nm,
        tl=int((s & m_hat).sum()) / ns,
        cl=int((s_hat & ~m).sum()) / ns,
    )


def mean_report(reports: list[ReconReport]) -> ReconReport:
    return ReconReport(
        dice=float(np.mean([r.dice for r in reports])),
        fpr=float(np.mean([r.fpr for r in reports])),
        tl=float(np.mean([r.tl for r in reports])),
        cl=float(np.mean([r.cl for r in reports])),
        averaged_over_views=True,
    )


def threshold(prob, level: float = 0.5) -> np.ndarray:
    return np.asarray(prob) > level


# -- clustering agreement ------------------------------------------------------

def _labels(c):
    return np.asarray(getattr(c, "labels", c)).ravel()


def contingency(c1, c2) -> np.ndarray:
    a, b = _labels(c1), _labels(c2)
    if len(a) != len(b):
        raise SizeMismatch(f"clusterings cover {len(a)} and {len(b)} subjects")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia.ravel(), ib.ravel()), 1)
    return table


def _pair_counts(c1, c2):
    table = contingency(c1, c2)
    n = int(table.sum())
    if n < 2:
        raise SizeMismatch("need at least 2 subjects")
    both = sum(comb(int(v), 2) for v in table.ravel())
    rows = sum(comb(int(v), 2) for v in table.sum(axis=1))
    cols = sum(comb(int(v), 2) for v in table.sum(axis=0))
    return n, both, rows, cols


def rand_index(c1, c2) -> float:
    """(pairs together in both + pairs apart in both) / C(n, 2)."""
    n, both, rows, cols = _pair_counts(c1, c2)
    total = comb(n, 2)
    tn = total - rows - cols + both
    return (both + tn) / total


def adjusted_rand_index(c1, c2) -> float:
    """Hubert-Arabie ARI from the contingency table (exact integer pair counts)."""
    n, both, rows, cols = _pair_counts(c1, c2)
    total = comb(n, 2)
    expected = rows * cols / total
    max_index = (rows + cols) / 2
    if max_index == expected:
        # both single-cluster or both all-singletons
        return 1.0 if _same_partition(c1, c2) else 0.0
    return (both - expected) / (max_index - expected)


def _same_partition(c1, c2) -> bool:
    table = contingency(c1, c2)
    return bool(((table > 0).sum(axis=0) == 1).all() and ((table > 0).sum(axis=1) == 1).all())


def agreement(c1, c2) -> ClusterAgreement:
    return ClusterAgreement(rand_index(c1, c2), adjusted_rand_index(c1, c2))


# -- reports -------------------------------------------------------------------

RECON_CSV_HEADER = ["train_data", "eval_data", "fold", "subject_id", "view", "dice", "fpr", "tl", "cl"]


def write_recon_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECON_CSV_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in RECON_CSV_HEADER})


def fold_summary(per_fold: list[ReconReport]) -> dict:
    """Mean and standard deviation across folds for each metric."""
    out = {}
    for key in ("dice", "fpr", "tl", "cl"):
        vals = np.array([getattr(r, key) for r in per_fold])
        out[key] = {"mean": float(vals.mean()), "sd": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    out["n_folds"] = len(per_fold)
    return out


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


__all__ = [
    "ReconReport", "ClusterAgreement", "recon_metrics", "mean_report", "threshold", "contingency",
    "rand_index", "adjusted_rand_index", "agreement", "write_recon_csv", "fold_summary",
    "write_json",
]
