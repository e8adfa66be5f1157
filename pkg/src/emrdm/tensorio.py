"""Binary tensor container used for checkpoints and image files.

Layout (all integers little-endian)::

    b"EMRD"                     magic
    u32 version
    u32 header_len, header      UTF-8 JSON (sorted keys, compact separators)
    u32 n_tensors
    per tensor:
        u32 name_len, name      UTF-8
        u8  dtype code          1 = float32
        u32 rank, u32 dims[rank]
        payload                 little-endian float32, C order

Saving what was loaded reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"EMRD"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4")}
_CODE_OF = {np.dtype("<f4"): 1}


def _encode_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def dumps(header: dict, tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    hdr = _encode_header(header)
    parts += [struct.pack("<I", len(hdr)), hdr, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack("<BI", _CODE_OF[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes):
    """Parse a container; returns ``(header, tensors)`` with tensors in file order."""
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated tensor container")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not an EMRD container (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported container version {version} (expected {VERSION})")
    (hlen,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(bytes(take(hlen)).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt container header: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        code, rank = struct.unpack("<BI", take(5))
        if code not in DTYPE_CODES:
            raise CheckpointError(f"tensor {name!r}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dtype = DTYPE_CODES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(bytes(take(size)), dtype=dtype).reshape(dims).copy()
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last tensor")
    return header, tensors


def save(path, header: dict, tensors: dict) -> None:
    Path(path).write_bytes(dumps(header, tensors))


def load(path):
    return loads(Path(path).read_bytes())
