"""Procedural airway-like trees with planted shape classes.

Four classes are planted, each differing in a measurable way:

* 0: narrow branching angles
* 1: wide branching angles
* 2: short trachea and deeper branching
* 3: left/right asymmetric subtree depth

Trees are built as a list of straight tube segments and rasterized with a
capsule test (a voxel is airway when its center lies within the segment radius
of the segment's center line).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import RasterizationOverflow
from .volume import LabeledVolume, count_components

log = logging.getLogger(__name__)

N_CLASSES = 4
MAX_RETRIES = 10
MIN_RADIUS = 0.9  # > sqrt(3)/2 keeps every rasterized tube 26-connected

# per-class overrides applied by TreeSpec.for_class
_CLASS_TABLE = {
    0: dict(branch_angle_mean=22.0, trachea_length=0.28, max_generation=8, depth_deficit=0),
    1: dict(branch_angle_mean=50.0, trachea_length=0.28, max_generation=8, depth_deficit=0),
    2: dict(branch_angle_mean=34.0, trachea_length=0.12, max_generation=10, depth_deficit=0),
    3: dict(branch_angle_mean=34.0, trachea_length=0.28, max_generation=8, depth_deficit=4),
}


@dataclass(frozen=True)
class TreeSpec:
    seed: int
    shape_class: int = 0
    max_generation: int = 8
    branch_angle_mean: float = 35.0
    branch_length_decay: float = 0.76
    radius_decay: float = 0.8
    volume_dims: tuple[int, int, int] = (96, 96, 96)
    # trachea length as a fraction of the z extent
    trachea_length: float = 0.28
    # generations removed from the right main-bronchus subtree
    depth_deficit: int = 0
    angle_jitter: float = 4.0
    tilt_degrees: float = 6.0

    @classmethod
    def for_class(cls, shape_class: int, seed: int, **overrides) -> "TreeSpec":
        if shape_class not in _CLASS_TABLE:
            raise ValueError(f"shape_class must be in 0..{N_CLASSES - 1}")
        params = dict(_CLASS_TABLE[shape_class])
        params.update(overrides)
        return cls(seed=int(seed), shape_class=shape_class, **params)


@dataclass(frozen=True)
class Segment:
    start: np.ndarray
    end: np.ndarray
    radius: float
    generation: int
    parent: int  # index into the segment list, -1 for the trachea
    side: int  # 0 = left subtree, 1 = right subtree, -1 = trachea

    @property
    def direction(self) -> np.ndarray:
        d = self.end - self.start
        return d / np.linalg.norm(d)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) * c + s * k + (1 - c) * np.outer(axis, axis)


def _perpendicular(v: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = np.cross(v, helper)
    return p / np.linalg.norm(p)


def build_skeleton(spec: TreeSpec) -> list[Segment]:
    """Center-line segments of the tree, in breadth-first order."""
    if spec.max_generation < 0:
        raise ValueError("max_generation must be >= 0")
    rng = np.random.default_rng(spec.seed)
    dims = np.asarray(spec.volume_dims, dtype=float)
    tilt = _rotation(rng.normal(size=3), np.deg2rad(rng.uniform(-1, 1) * spec.tilt_degrees))

    root = np.array([dims[0] / 2, dims[1] / 2, dims[2] - 6.0])
    down = tilt @ np.array([0.0, 0.0, -1.0])
    trachea_len = spec.trachea_length * dims[2] * rng.uniform(0.92, 1.08)
    r0 = 0.045 * dims.min() * rng.uniform(0.9, 1.1)
    first_len = 0.14 * dims[2]
    segments = [Segment(root, root + trachea_len * down, max(r0, MIN_RADIUS), 0, -1, -1)]
    # the branching plane normal, rotated ~90 degrees per generation
    normals = [tilt @ np.array([0.0, 1.0, 0.0])]

    frontier = [0]
    while frontier:
        nxt = []
        for idx in frontier:
            parent = segments[idx]
            g = parent.generation + 1
            for child_side, sign in ((0, 1.0), (1, -1.0)):
                side = child_side if parent.side == -1 else parent.side
                limit = spec.max_generation - (spec.depth_deficit if side == 1 else 0)
                if g > limit:
                    continue
                d = parent.direction
                normal = normals[idx]
                angle = np.deg2rad(spec.branch_angle_mean + rng.normal() * spec.angle_jitter)
                child_dir = _rotation(normal, sign * angle) @ d
                length = first_len * spec.branch_length_decay ** (g - 1) * rng.uniform(0.85, 1.15)
                radius = max(parent.radius * spec.radius_decay, MIN_RADIUS)
                seg = Segment(parent.end, parent.end + length * child_dir, radius, g, idx, side)
                twist = np.deg2rad(90.0 + rng.normal() * 20.0)
                segments.append(seg)
                normals.append(_rotation(child_dir, twist) @ _project_out(normal, child_dir))
                nxt.append(len(segments) - 1)
        frontier = nxt
    return segments


def _project_out(v: np.ndarray, axis: np.ndarray) -> np.ndarray:
    p = v - np.dot(v, axis) * axis
    n = np.linalg.norm(p)
    return p / n if n > 1e-9 else _perpendicular(axis)


def rasterize(segments: list[Segment], dims: tuple[int, int, int]) -> np.ndarray:
    """Paint capsules into a uint8 grid, proximal generations overwrite distal ones."""
    data = np.zeros(dims, dtype=np.uint8)
    upper = np.asarray(dims) - 1
    for seg in sorted(segments, key=lambda s: -s.generation):
        lo = np.floor(np.minimum(seg.start, seg.end) - seg.radius).astype(int)
        hi = np.ceil(np.maximum(seg.start, seg.end) + seg.radius).astype(int)
        if (lo < 0).any() or (hi > upper).any():
            raise RasterizationOverflow(f"generation-{seg.generation} segment leaves the volume")
        gx, gy, gz = np.ogrid[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        ab = seg.end - seg.start
        t = ((gx - seg.start[0]) * ab[0] + (gy - seg.start[1]) * ab[1] + (gz - seg.start[2]) * ab[2]) / ab.dot(ab)
        t = np.clip(t, 0.0, 1.0)
        d2 = ((gx - seg.start[0] - t * ab[0]) ** 2 + (gy - seg.start[1] - t * ab[1]) ** 2
              + (gz - seg.start[2] - t * ab[2]) ** 2)
        region = data[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        region[d2 <= seg.radius ** 2] = seg.generation + 1
    return data


def generate(spec: TreeSpec) -> LabeledVolume:
    if min(spec.volume_dims) < 64:
        raise ValueError("volume_dims must each be >= 64")
    data = rasterize(build_skeleton(spec), tuple(spec.volume_dims))
    if count_components(data > 0) != 1:
        # the minimum radius makes this unreachable; keep the guarantee explicit
        raise RasterizationOverflow("rasterized tree is not a single 26-connected component")
    return LabeledVolume(data)


def summary_statistics(segments: list[Segment]) -> dict[str, float]:
    """Shape descriptors read from the ground-truth skeleton."""
    angles = []
    for seg in segments:
        if seg.parent >= 0:
            cosang = np.clip(np.dot(seg.direction, segments[seg.parent].direction), -1.0, 1.0)
            angles.append(np.degrees(np.arccos(cosang)))
    depth = [max((s.generation for s in segments if s.side == side), default=0) for side in (0, 1)]
    return {
        "branch_angle": float(np.mean(angles)) if angles else 0.0,
        "max_depth": float(max(depth)),
        "depth_asymmetry": float(abs(depth[0] - depth[1])),
        "trachea_length": segments[0].length,
    }


def _subject_seed(base_seed: int, shape_class: int, index: int, attempt: int) -> int:
    ss = np.random.SeedSequence([base_seed, shape_class, index, attempt])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def iter_cohort(n_per_class: int, base_seed: int, **spec_overrides) -> Iterator[tuple[str, TreeSpec, LabeledVolume]]:
    """Yield ``(subject_id, spec, volume)`` with classes interleaved."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    for i in range(n_per_class):
        for c in range(N_CLASSES):
            for attempt in range(MAX_RETRIES + 1):
                spec = TreeSpec.for_class(c, _subject_seed(base_seed, c, i, attempt), **spec_overrides)
                try:
                    vol = generate(spec)
                    break
                except RasterizationOverflow:
                    if attempt == MAX_RETRIES:
                        raise
                    log.debug("class %d subject %d overflowed, retrying", c, i)
            yield f"subj{i * N_CLASSES + c:04d}", spec, vol


def cohort(n_per_class: int, base_seed: int, **spec_overrides) -> list[tuple[LabeledVolume, int]]:
    return [(vol, spec.shape_class) for _, spec, vol in iter_cohort(n_per_class, base_seed, **spec_overrides)]


def write_manifest(path: str | Path, rows: list[tuple[str, int, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "class_label", "seed"])
        w.writerows(rows)


def read_manifest(path: str | Path) -> list[tuple[str, int, int]]:
    with open(path, newline="") as fh:
        return [(r["subject_id"], int(r["class_label"]), int(r["seed"])) for r in csv.DictReader(fh)]


__all__ = [
    "TreeSpec", "Segment", "build_skeleton", "rasterize", "generate", "summary_statistics",
    "iter_cohort", "cohort", "write_manifest", "read_manifest",
]
