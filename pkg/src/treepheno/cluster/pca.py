from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateData


@dataclass
class FeatureMatrix:
    """Rows are subjects. ``provenance`` records how the columns were made."""

    values: np.ndarray
    ids: list[str]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("feature matrix must be 2D")
        if len(self.ids) != len(self.values):
            raise ValueError(f"{len(self.ids)} ids for {len(self.values)} rows")
        if not np.isfinite(self.values).all():
            raise ValueError("feature matrix has non-finite entries")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def subset(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(self.values[rows], [self.ids[i] for i in rows], dict(self.provenance))


@dataclass
class PCAResult:
    features: FeatureMatrix
    components: np.ndarray  # (k, d), orthonormal rows
    mean: np.ndarray
    explained_variance: np.ndarray  # per kept component
    total_variance: float

    @property
    def variance_explained(self) -> float:
        return float(self.explained_variance.sum() / self.total_variance)

    def reconstruct(self) -> np.ndarray:
        return self.features.values @ self.components + self.mean


def pca_reduce(x: FeatureMatrix, target_dim: int | None = None,
               variance_target: float | None = None) -> PCAResult:
    """Project mean-centered rows onto their leading principal components.

    Give either ``target_dim`` or ``variance_target`` (smallest dimension whose
    cumulative explained variance reaches it). The dimension is capped at
    ``min(n - 1, d)``, with a warning when the cap binds.
    """
    if (target_dim is None) == (variance_target is None):
        raise ValueError("give exactly one of target_dim / variance_target")
    if x.n < 2:
        raise DegenerateData("need at least 2 rows")
    mean = x.values.mean(axis=0)
    xc = x.values - mean
    # thin SVD of the centered data; squared singular values are the
    # covariance eigenvalues times (n - 1)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    eig = s ** 2 / (x.n - 1)
    total = float(eig.sum())
    if total <= 0:
        raise DegenerateData("features have zero variance")
    vt = _fix_signs(vt)
    cap = min(x.n - 1, x.d)
    if target_dim is not None:
        k = int(target_dim)
        if k < 1:
            raise ValueError("target_dim must be >= 1")
        if k > cap:
            warnings.warn(f"target_dim {k} exceeds rank bound {cap}; using {cap}", stacklevel=2)
            k = cap
    else:
        if not 0 < variance_target <= 1:
            raise ValueError("variance_target must be in (0, 1]")
        cum = np.cumsum(eig) / total
        k = min(int(np.searchsorted(cum, variance_target - 1e-12) + 1), cap)
    comps = vt[:k]
    reduced = xc @ comps.T
    prov = dict(x.provenance)
    prov.update(pca_components=k, variance_explained=float(eig[:k].sum() / total), source_dim=x.d)
    return PCAResult(FeatureMatrix(reduced, list(x.ids), prov), comps, mean, eig[:k], total)


def _fix_signs(vt: np.ndarray) -> np.ndarray:
    # largest-magnitude loading positive, for reproducible component signs
    idx = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(len(vt)), idx])
    signs[signs == 0] = 1
    return vt * signs[:, None]
