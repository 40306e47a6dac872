"""Checkpoint container: magic, JSON header with tensor manifest, float32 blob.

Layout::

    b"AECKPT01" | uint32 LE header length | UTF-8 JSON header | blob

The header holds ``architecture``, ``seed``, ``epoch``, ``loss``, any extra
metadata, and ``tensors``: a list of ``{name, shape, offset, nbytes}`` where
offsets are relative to the start of the blob.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptFile
from .model import Architecture, UNetNoSkip

MAGIC = b"AECKPT01"


def save_checkpoint(path: str | Path, model: UNetNoSkip, epoch: int = 0, loss: float = float("nan"),
                    **meta) -> None:
    tensors, chunks, offset = [], [], 0
    for name, arr in model.state().items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "architecture": model.arch.to_dict(),
        "seed": model.seed,
        "epoch": int(epoch),
        "loss": None if not np.isfinite(loss) else float(loss),
        "dtype": "float32-le",
        "tensors": tensors,
        **meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)


def read_header(path: str | Path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CorruptFile(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: bad header") from exc
    return header, raw[12 + hlen:]


def load_checkpoint(path: str | Path) -> tuple[UNetNoSkip, dict]:
    header, blob = read_header(path)
    model = UNetNoSkip(Architecture.from_dict(header["architecture"]), seed=header["seed"])
    state = {}
    for t in header["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(blob):
            raise CorruptFile(f"{path}: tensor {t['name']} runs past the blob")
        state[t["name"]] = np.frombuffer(blob[t["offset"]:end], dtype="<f4").reshape(t["shape"])
    model.load_state(state)
    return model, header
