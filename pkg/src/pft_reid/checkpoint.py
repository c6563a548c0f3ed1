"""Binary checkpoint format "PFT1".

Layout (all integers little-endian u32, payloads little-endian float64):

    magic "PFT1" | version | tensor count |
    per tensor: name length | UTF-8 name | rank | dims... | row-major payload

The round trip is bitwise lossless and tensor order is preserved, so a
checkpoint written from the same run is byte-identical.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"PFT1"
VERSION = 1


def save_checkpoint(path, tensors):
    """Write an ordered name->array mapping; names must be unique."""
    names = list(tensors)
    if len(set(names)) != len(names):
        raise ValueError("checkpoint tensor names must be unique")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(names)))
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f8", copy=False).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered name->array mapping."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    stream = io.BytesIO(blob)

    def take(n, what):
        chunk = stream.read(n)
        if len(chunk) != n:
            raise DataError(f"{path}: truncated checkpoint while reading {what}")
        return chunk

    if take(4, "magic") != MAGIC:
        raise DataError(f"{path}: bad magic, not a {MAGIC.decode()} checkpoint")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        if name in tensors:
            raise DataError(f"{path}: duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n_values = int(np.prod(dims)) if rank else 1
        payload = take(8 * n_values, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if stream.read(1):
        raise DataError(f"{path}: trailing bytes after last tensor")
    return tensors
