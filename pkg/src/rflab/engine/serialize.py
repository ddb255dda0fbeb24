"""Binary parameter files.

Layout (little-endian)::

    b"MBAT" | version:u32 | records...
    record = name_len:u32 | name:utf-8 | rank:u32 | dims:u64[rank] | values:f32[prod(dims)]
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"MBAT"
VERSION = 1


def save_params(path, params):
    """Write ``{name: array}`` to ``path`` in insertion order."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in params.items():
        arr = np.asarray(value)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path):
    """Read a parameter file into ``{name: float32 array}``."""
    buf = Path(path).read_bytes()
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError(f"{path}: missing MBAT header")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 8
    out = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64))
            end = pos + 4 * count
            if end > len(buf):
                raise FormatError(f"{path}: record {name!r} truncated")
            out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos = end
    except struct.error as exc:
        raise FormatError(f"{path}: truncated record header at byte {pos}") from exc
    return out
