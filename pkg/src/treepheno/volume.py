"""Labeled airway volumes and the ``.lvol`` container."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import CorruptFile

MAGIC = b"LVOL0001"
HEADER_SIZE = 64
MAX_LABEL = 17  # generations 0..16 stored as g+1
_HEADER = struct.Struct("<8s3I3d20x")


@dataclass
class LabeledVolume:
    """Voxel grid where 0 is background and ``g + 1`` marks generation ``g``.

    ``data`` is indexed ``[x, y, z]``; ``spacing`` is in millimeters.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3:
            raise ValueError(f"expected a 3D array, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def foreground(self) -> np.ndarray:
        return self.data > 0

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def max_generation(self) -> int:
        return int(self.data.max()) - 1

    def generation_counts(self) -> np.ndarray:
        """Voxel count per label, index 0 = background."""
        return np.bincount(self.data.ravel(), minlength=MAX_LABEL + 1)

    def validate(self) -> None:
        if self.data.max(initial=0) > MAX_LABEL:
            raise ValueError(f"label above {MAX_LABEL}")
        if self.foreground_count() == 0:
            raise ValueError("volume has no foreground")


def count_components(mask: np.ndarray) -> int:
    """Number of 26-connected (3D) or 8-connected (2D) components."""
    structure = np.ones((3,) * mask.ndim, dtype=bool)
    _, n = ndimage.label(mask, structure=structure)
    return int(n)


def write_lvol(path: str | Path, vol: LabeledVolume) -> None:
    nx, ny, nz = vol.dims
    header = _HEADER.pack(MAGIC, nx, ny, nz, *vol.spacing)
    # x-fastest on disk means Fortran order for an [x, y, z] array
    body = np.asarray(vol.data, dtype=np.uint8).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def read_lvol(path: str | Path) -> LabeledVolume:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise CorruptFile(f"{path}: truncated header")
    magic, nx, ny, nz, sx, sy, sz = _HEADER.unpack(raw[:HEADER_SIZE])
    if magic != MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if raw[44:HEADER_SIZE] != bytes(20):
        raise CorruptFile(f"{path}: reserved header bytes are not zero")
    n = nx * ny * nz
    if len(raw) != HEADER_SIZE + n:
        raise CorruptFile(f"{path}: expected {n} label bytes, found {len(raw) - HEADER_SIZE}")
    if not all(np.isfinite(s) and s > 0 for s in (sx, sy, sz)):
        raise CorruptFile(f"{path}: invalid spacing")
    data = np.frombuffer(raw, dtype=np.uint8, offset=HEADER_SIZE).reshape((nx, ny, nz), order="F")
    if data.max(initial=0) > MAX_LABEL:
        raise CorruptFile(f"{path}: label above {MAX_LABEL}")
    return LabeledVolume(np.array(data), (sx, sy, sz))
