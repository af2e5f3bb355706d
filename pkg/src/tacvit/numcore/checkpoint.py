"""TVT1 binary checkpoint format.

Layout (all little-endian)::

    b"TVT1" | u32 count | count x (u16 name_len | utf-8 name | u8 rank | rank x u32 dim | f32 values)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import StorageError

MAGIC = b"TVT1"


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise StorageError("not a TVT1 checkpoint (bad magic)")
    try:
        (count,) = struct.unpack_from("<I", buf, 4)
        pos = 8
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(buf):
                raise StorageError(f"truncated TVT1 data for tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise StorageError(f"truncated TVT1 checkpoint: {exc}") from None
    if pos != len(buf):
        raise StorageError(f"trailing bytes in TVT1 checkpoint ({len(buf) - pos})")
    return out


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode(tensors))
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf)
