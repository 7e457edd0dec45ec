"""Binary checkpoint container.

Layout (all little-endian)::

    b"AMSN"  u16 version
    u32 len, utf-8 fingerprint ("<sha256>\\n<config text>")
    u32 count, then per tensor:
        u16 len, name; u8 rank; u32 x rank dims; u8 dtype (0 f64, 1 f32); payload
    u32 len, RNG state (utf-8 JSON)
    u32 epoch
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AMSN"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class FingerprintMismatchError(CheckpointError):
    pass


def encode(fingerprint: str, tensors: dict[str, np.ndarray], rng_state: dict, epoch: int,
           storage: str = "f64") -> bytes:
    tag = {"f64": 0, "f32": 1}[storage]
    out = [MAGIC, struct.pack("<H", VERSION)]
    fp = fingerprint.encode()
    out.append(struct.pack("<I", len(fp)) + fp)
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        nb = name.encode()
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(struct.pack("<B", tag) + np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes())
    rs = json.dumps(rng_state, sort_keys=True).encode()
    out.append(struct.pack("<I", len(rs)) + rs)
    out.append(struct.pack("<I", epoch))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"{self.source}: truncated at byte {self.pos} (needed {n} more)")
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes, source: str = "<checkpoint>"):
    """Returns ``(fingerprint, tensors, rng_state, epoch)``; tensors come back as float64."""
    if data[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic, not an AMSN checkpoint")
    r = _Reader(data, source)
    r.pos = 4
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, expected {VERSION}")
    (n,) = r.unpack("<I")
    fp = r.take(n).decode()
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        (tag,) = r.unpack("<B")
        if tag not in DTYPES:
            raise CheckpointError(f"{source}: tensor {name!r} has unknown dtype tag {tag}")
        dt = DTYPES[tag]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(size), dtype=dt).reshape(dims)
        tensors[name] = arr.astype(np.float64)
    (n,) = r.unpack("<I")
    rng_state = json.loads(r.take(n).decode())
    (epoch,) = r.unpack("<I")
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes")
    return fp, tensors, rng_state, epoch


def write(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
