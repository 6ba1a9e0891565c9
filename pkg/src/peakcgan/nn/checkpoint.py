"""Binary parameter checkpoints.

Layout: ``PCGANCKP`` magic, little-endian uint32 format version, uint64
header length, UTF-8 JSON header ``{"meta": ..., "tensors": [{"name",
"shape", "offset"}]}``, then raw little-endian float64 data. The output is a
pure function of the parameters and metadata, so equal models give
byte-identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Module

MAGIC = b"PCGANCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(arrays: dict[str, np.ndarray], path, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen])
    body = start + hlen
    arrays = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        a = np.frombuffer(raw, dtype="<f8", count=n, offset=body + e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return arrays, header["meta"]


def save_module(module: Module, path, meta: dict | None = None) -> None:
    save_arrays({k: p.data for k, p in module.params().items()}, path, meta)


def load_module(module: Module, path) -> dict:
    arrays, meta = load_arrays(path)
    params = module.params()
    missing = set(params) ^ set(arrays)
    if missing:
        raise CheckpointError(f"parameter names differ: {sorted(missing)[:5]}")
    for k, p in params.items():
        if arrays[k].shape != p.shape:
            raise CheckpointError(f"{k}: shape {arrays[k].shape} != {p.shape}")
        p.data[...] = arrays[k]
    return meta
