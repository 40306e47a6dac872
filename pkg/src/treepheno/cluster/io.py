"""Feature matrix and cluster assignment files."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptFile
from .pca import FeatureMatrix

FEATURE_MAGIC = b"FEAT0001"


def write_features_csv(path: str | Path, fm: FeatureMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id"] + [f"f{i}" for i in range(fm.d)])
        for sid, row in zip(fm.ids, fm.values):
            w.writerow([sid] + [repr(float(v)) for v in row])


def read_features_csv(path: str | Path) -> FeatureMatrix:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[0] != "subject_id":
            raise CorruptFile(f"{path}: missing subject_id column")
        ids, rows = [], []
        for line in r:
            ids.append(line[0])
            rows.append([float(v) for v in line[1:]])
    return FeatureMatrix(np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1), ids)


def write_features_bin(path: str | Path, fm: FeatureMatrix, **meta) -> None:
    """``FEAT0001`` | uint32 header length | JSON header | float64 LE row-major blob."""
    header = {"ids": fm.ids, "n": fm.n, "d": fm.d, "dtype": "float64-le",
              "provenance": fm.provenance, **meta}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(np.ascontiguousarray(fm.values, dtype="<f8").tobytes())


def _split(path: str | Path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != FEATURE_MAGIC or len(raw) < 12:
        raise CorruptFile(f"{path}: not a feature container")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: bad header") from exc
    return header, raw[12 + hlen:]


def read_features_header(path: str | Path) -> dict:
    return _split(path)[0]


def read_features_bin(path: str | Path) -> FeatureMatrix:
    header, blob = _split(path)
    n, d = header["n"], header["d"]
    if len(blob) != 8 * n * d:
        raise CorruptFile(f"{path}: expected {n}x{d} float64 values")
    values = np.frombuffer(blob, dtype="<f8").reshape(n, d)
    return FeatureMatrix(values.copy(), list(header["ids"]), header.get("provenance", {}))


def write_assignments(path: str | Path, ids: list[str], labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "label"])
        for sid, lab in zip(ids, labels):
            w.writerow([sid, int(lab)])


def read_assignments(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [r["subject_id"] for r in rows], np.array([int(r["label"]) for r in rows], dtype=np.int64)
