"""Deterministic array container used for datasets and model checkpoints.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the raw array buffers back to back in header order. The header carries
arbitrary JSON metadata plus each array's name, dtype and shape, so files are
self-describing. Unlike zip-based formats the bytes depend only on content,
which keeps rebuild-hash and byte-identity checks honest.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"LAGFUS01"


class StorageError(ValueError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    specs = []
    buffers = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        specs.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        buffers.append(arr.tobytes())
    header = json.dumps({"meta": meta or {}, "arrays": specs},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for buf in buffers:
            fh.write(buf)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise StorageError(f"{path}: not a lagfusion container (bad magic)")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise StorageError(f"{path}: truncated buffer for array '{spec['name']}'")
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return arrays, header["meta"]


def content_hash(arrays: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """SHA-256 over canonicalized metadata and raw array bytes."""
    h = hashlib.sha256()
    h.update(json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8"))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode("utf-8"))
        h.update(arr.dtype.str.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()
