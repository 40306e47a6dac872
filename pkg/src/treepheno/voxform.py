"""Turn labeled 3D airway volumes into normalized three-view MIP stacks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFile, DegenerateGeometry, EmptyResult
from .volume import LabeledVolume

VIEW_ORDER = ("axial", "coronal", "sagittal")
# array axis collapsed by each view; data is indexed [x, y, z]
_VIEW_AXIS = {"axial": 2, "coronal": 1, "sagittal": 0}
DILATION_KERNEL = (4, 4)
DILATION_ANCHOR = (1, 1)
_TIE_RTOL = 1e-9


@dataclass
class RigidAlignment:
    rotation: np.ndarray  # rows are the principal axes, in physical coordinates
    centroid: np.ndarray  # voxel coordinates


@dataclass
class MipStack:
    views: np.ndarray  # (3, H, W) in [0, 1], order VIEW_ORDER
    dilated: bool
    trachea_included: bool
    subject_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return variant_name(self.dilated, self.trachea_included)


def variant_name(dilated: bool, trachea_included: bool) -> str:
    return ("D" if dilated else "ND") + "+" + ("T" if trachea_included else "NT")


def parse_variant(name: str) -> tuple[bool, bool]:
    """``"D+NT"`` -> ``(dilated=True, trachea_included=False)``."""
    try:
        d, t = name.upper().split("+")
    except ValueError:
        raise ValueError(f"bad variant {name!r}") from None
    if d not in ("D", "ND") or t not in ("T", "NT"):
        raise ValueError(f"bad variant {name!r}")
    return d == "D", t == "T"


ALL_VARIANTS = ("D+T", "D+NT", "ND+T", "ND+NT")


# -- alignment ---------------------------------------------------------------

def compute_alignment(vol: LabeledVolume) -> RigidAlignment:
    """Principal axes of the foreground, in physical (spacing-scaled) coordinates.

    Rows of the rotation are covariance eigenvectors ordered by descending
    eigenvalue. Each row is signed so its largest-magnitude entry is positive;
    a resulting reflection is undone by flipping the last row.
    """
    idx = np.argwhere(vol.data > 0).astype(np.float64)
    if len(idx) < 4:
        raise DegenerateGeometry(f"need at least 4 foreground voxels, got {len(idx)}")
    spacing = np.asarray(vol.spacing)
    pts = idx * spacing
    centroid = pts.mean(axis=0)
    cov = np.cov(pts - centroid, rowvar=False, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 0 or evals[0] <= evals[-1] * 1e-12:
        raise DegenerateGeometry("foreground is collinear or coplanar")

    vecs = []
    for v in evecs.T:
        k = int(np.argmax(np.abs(v)))
        # break |v| ties toward the lowest index, argmax already does this
        vecs.append(v if v[k] > 0 else -v)
    scale = evals[-1]
    # quantize eigenvalues so near-ties fall back to lexicographic order
    order = sorted(range(3), key=lambda i: (-round(evals[i] / (scale * _TIE_RTOL)), tuple(-vecs[i])))
    rot = np.array([vecs[i] for i in order])
    if np.linalg.det(rot) < 0:
        rot[2] = -rot[2]
    return RigidAlignment(rotation=rot, centroid=centroid / spacing)


def _output_spacing(rot: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    # exact for axis permutations, isotropic input stays isotropic
    return np.sqrt((rot ** 2) @ (spacing ** 2))


def apply_alignment(vol: LabeledVolume, a: RigidAlignment, chunk: int = 1 << 21) -> LabeledVolume:
    """Rotate, crop to the rotated foreground's bounding box, resample nearest-neighbor."""
    rot = np.asarray(a.rotation, dtype=np.float64)
    if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
        raise ValueError("rotation is not orthonormal")
    spacing = np.asarray(vol.spacing)
    idx = np.argwhere(vol.data > 0)
    if len(idx) == 0:
        raise DegenerateGeometry("empty foreground")
    c_phys = np.asarray(a.centroid) * spacing
    rotated = (idx * spacing - c_phys) @ rot.T
    out_sp = _output_spacing(rot, spacing)
    lo = rotated.min(axis=0)
    extent = (rotated.max(axis=0) - lo) / out_sp
    dims = np.floor(extent + 0.5).astype(np.int64) + 1
    if (dims <= 0).any():
        raise DegenerateGeometry("rotated bounding box is empty")

    out = np.zeros(tuple(dims), dtype=np.uint8)
    flat = out.reshape(-1)
    n = flat.size
    src_shape = np.asarray(vol.data.shape)
    for start in range(0, n, chunk):
        lin = np.arange(start, min(start + chunk, n))
        m = np.stack(np.unravel_index(lin, out.shape), axis=1).astype(np.float64)
        y = lo + m * out_sp
        x = (y @ rot + c_phys) / spacing
        src = np.floor(x + 0.5).astype(np.int64)
        ok = np.all((src >= 0) & (src < src_shape), axis=1)
        vals = np.zeros(len(lin), dtype=np.uint8)
        s = src[ok]
        vals[ok] = vol.data[s[:, 0], s[:, 1], s[:, 2]]
        flat[start:start + len(lin)] = vals
    return LabeledVolume(out, tuple(out_sp))


def crop_to_foreground(vol: LabeledVolume) -> LabeledVolume:
    idx = np.argwhere(vol.data > 0)
    if len(idx) == 0:
        raise EmptyResult("no foreground to crop")
    lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
    return LabeledVolume(vol.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]].copy(), vol.spacing)


def mask_trachea(vol: LabeledVolume) -> LabeledVolume:
    data = vol.data.copy()
    data[data == 1] = 0
    if not data.any():
        raise EmptyResult("masking the trachea removed all foreground")
    return LabeledVolume(data, vol.spacing)


# -- projection --------------------------------------------------------------

def dilate_anchored(img: np.ndarray, kernel: tuple[int, int] = DILATION_KERNEL,
                    anchor: tuple[int, int] = DILATION_ANCHOR) -> np.ndarray:
    """Binary dilation with a ones kernel; a set pixel at (r, c) fills
    rows ``r - anchor[0] .. r - anchor[0] + kh - 1`` (likewise columns)."""
    img = np.asarray(img, dtype=bool)
    kh, kw = kernel
    ar, ac = anchor
    out = np.zeros_like(img)
    for dr in range(kh):
        for dc in range(kw):
            out |= _shift(img, dr - ar, dc - ac)
    return out


def _shift(img: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    rs, re = max(dr, 0), min(h + dr, h)
    cs, ce = max(dc, 0), min(w + dc, w)
    if rs < re and cs < ce:
        out[rs:re, cs:ce] = img[rs - dr:re - dr, cs - dc:ce - dc]
    return out


def project_views(vol: LabeledVolume, dilate_peripheral: bool = False,
                  dilation_threshold_generation: int = 5,
                  kernel: tuple[int, int] = DILATION_KERNEL) -> list[np.ndarray]:
    """Full-resolution binary MIPs in VIEW_ORDER."""
    data = vol.data
    if not data.any():
        raise EmptyResult("cannot project an empty volume")
    views = []
    for name in VIEW_ORDER:
        ax = _VIEW_AXIS[name]
        if dilate_peripheral:
            cut = dilation_threshold_generation + 1  # labels are generation + 1
            central = ((data > 0) & (data <= cut)).any(axis=ax)
            peripheral = (data > cut).any(axis=ax)
            view = central | dilate_anchored(peripheral, kernel)
        else:
            view = (data > 0).any(axis=ax)
        views.append(view)
    return views


def pad_square(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    n = max(h, w)
    out = np.zeros((n, n), dtype=img.dtype)
    r0, c0 = (n - h) // 2, (n - w) // 2
    out[r0:r0 + h, c0:c0 + w] = img
    return out


def max_pool_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Max over rectangular bins; when upsampling each bin is one source pixel."""
    out = img
    for axis in (0, 1):
        n = out.shape[axis]
        starts = (np.arange(size) * n) // size
        out = np.maximum.reduceat(out, starts, axis=axis)
    return out


def project_mip(vol: LabeledVolume, dilate_peripheral: bool = False,
                dilation_threshold_generation: int = 5,
                kernel: tuple[int, int] = DILATION_KERNEL,
                size: int | None = 256, trachea_included: bool = True,
                subject_id: str = "") -> MipStack:
    views = project_views(vol, dilate_peripheral, dilation_threshold_generation, kernel)
    squared = [pad_square(v) for v in views]
    if size is not None:
        squared = [max_pool_resize(v, size) for v in squared]
    else:
        n = max(v.shape[0] for v in squared)
        squared = [np.pad(v, ((0, n - v.shape[0]), (0, n - v.shape[1]))) for v in squared]
    return MipStack(np.stack(squared).astype(np.float32), bool(dilate_peripheral),
                    trachea_included, subject_id)


def preprocess(vol: LabeledVolume, variant: str, size: int = 256, subject_id: str = "",
               aligned: LabeledVolume | None = None) -> MipStack:
    """Align, optionally mask the trachea, project. ``aligned`` skips re-alignment."""
    dilated, trachea = parse_variant(variant)
    if aligned is None:
        aligned = apply_alignment(vol, compute_alignment(vol))
    if not trachea:
        aligned = mask_trachea(aligned)
    return project_mip(aligned, dilate_peripheral=dilated, size=size,
                       trachea_included=trachea, subject_id=subject_id)


# -- file IO -----------------------------------------------------------------

def write_pgm(path: str | Path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise CorruptFile(f"{path}: truncated PGM header")
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise CorruptFile(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    body = raw[pos + 1:]
    if maxval != 255 or len(body) != w * h:
        raise CorruptFile(f"{path}: unexpected PGM body")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float32) / 255.0


def stack_paths(directory: str | Path, subject_id: str) -> tuple[list[Path], Path]:
    d = Path(directory)
    return [d / f"{subject_id}_{v}.pgm" for v in VIEW_ORDER], d / f"{subject_id}.json"


def write_mipstack(directory: str | Path, stack: MipStack, extra: dict | None = None) -> list[Path]:
    pgms, sidecar = stack_paths(directory, stack.subject_id)
    for p, view in zip(pgms, stack.views):
        write_pgm(p, view)
    meta = {
        "subject_id": stack.subject_id,
        "dilated": stack.dilated,
        "trachea_included": stack.trachea_included,
        "view_order": list(VIEW_ORDER),
    }
    meta.update(extra or {})
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [*pgms, sidecar]


def read_mipstack(directory: str | Path, subject_id: str) -> MipStack:
    pgms, sidecar = stack_paths(directory, subject_id)
    meta = json.loads(sidecar.read_text())
    if list(meta["view_order"]) != list(VIEW_ORDER):
        raise CorruptFile(f"{sidecar}: unsupported view order {meta['view_order']}")
    views = np.stack([read_pgm(p) for p in pgms])
    return MipStack(views, bool(meta["dilated"]), bool(meta["trachea_included"]),
                    meta["subject_id"], meta)
