"""DFW1 parameter checkpoints.

Layout (little-endian): b"DFW1", u32 count, then per parameter: u32 name
length, UTF-8 name, u32 ndim, ndim x u32 dims, float32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import FormatError

MAGIC = b"DFW1"


def encode(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError("bad DFW1 magic", 0)
    off = 4

    def u32() -> int:
        nonlocal off
        if off + 4 > len(buf):
            raise FormatError("truncated DFW1 record", off)
        (val,) = struct.unpack_from("<I", buf, off)
        off += 4
        return val

    out: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        n = u32()
        if off + n > len(buf):
            raise FormatError("truncated parameter name", off)
        name = buf[off : off + n].decode("utf-8")
        off += n
        ndim = u32()
        if ndim > 8:
            raise FormatError(f"parameter {name!r} has {ndim} dims", off - 4)
        dims = tuple(u32() for _ in range(ndim))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        if off + 4 * count > len(buf):
            raise FormatError(f"truncated payload for {name!r}", off)
        out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims).astype(np.float32)
        off += 4 * count
    if off != len(buf):
        raise FormatError("trailing bytes after last parameter", off)
    return out


def save(path, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(state))


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
