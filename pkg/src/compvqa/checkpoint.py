"""CVQA tensor container.

Layout (all integers little-endian)::

    b"CVQA" | version u32 | entry count u64
    per entry: name length u32 | UTF-8 name | rank u32 | dims u64 * rank | float32 data (row-major)

Used for model checkpoints and for per-image object features.
"""

from __future__ import annotations

import hashlib
import io
import struct
from collections import OrderedDict
from os import PathLike
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"CVQA"
VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<Q", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> OrderedDict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise DataError(f"truncated CVQA container at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise DataError("not a CVQA container (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise DataError(f"unsupported CVQA version {version}")
    (count,) = struct.unpack("<Q", take(8))
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        out[name] = data.astype(np.float32)
    if pos != len(view):
        raise DataError(f"{len(view) - pos} trailing bytes after CVQA entries")
    return out


def save(path: str | PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path: str | PathLike) -> OrderedDict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())


def tensor_digest(arr: np.ndarray) -> str:
    """SHA-256 of shape plus raw bytes; used for freeze checks."""
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(repr((arr.dtype.str, arr.shape)).encode())
    h.update(arr.tobytes())
    return h.hexdigest()
