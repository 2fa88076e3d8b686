"""Checkpoint files: a JSON header followed by raw float32 parameter blobs.

Layout (all little-endian)::

    uint64   header length in bytes
    bytes    UTF-8 JSON header {"params": [{"name", "shape"}, ...], ...}
    float32  payload of each parameter, concatenated in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = "dhhqa-checkpoint"


def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None):
    header = {
        "format": MAGIC,
        "version": 1,
        "dtype": "float32",
        "params": [{"name": k, "shape": list(p.shape)} for k, p in params.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path, requires_grad: bool = False) -> tuple[dict[str, Tensor], dict]:
    """Return ``(params, meta)``; parameters come back as float32 tensors."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: unreadable checkpoint header ({exc})") from None
    if header.get("format") != MAGIC:
        raise ValueError(f"{path}: not a dhhqa checkpoint")
    offset = 8 + n
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise ValueError(f"{path}: payload truncated at parameter {entry['name']!r}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = Tensor(arr.astype(np.float32), requires_grad=requires_grad)
        offset = end
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return params, header.get("meta", {})
