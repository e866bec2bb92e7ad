"""Binary checkpoint format for named float64 parameter blobs.

Layout (little-endian)::

    magic "DNPC" | version u32 | meta_len u32 | meta (UTF-8 JSON)
    count u32 | count x [name_len u16 | name | ndim u8 | dims u32 x ndim | float64 data]
    sha256 of every preceding byte (32 bytes)
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .channels import FormatError

MAGIC = b"DNPC"
VERSION = 1


def write_blobs(path, blobs: dict[str, np.ndarray], meta: dict) -> None:
    out = bytearray()
    meta_raw = json.dumps(meta, sort_keys=True).encode()
    out += struct.pack("<4sII", MAGIC, VERSION, len(meta_raw))
    out += meta_raw
    out += struct.pack("<I", len(blobs))
    for name, arr in blobs.items():
        raw_name = name.encode()
        arr = np.asarray(arr, dtype="<f8")
        out += struct.pack("<HB", len(raw_name), arr.ndim)
        out += raw_name
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr).tobytes()
    out += hashlib.sha256(out).digest()
    Path(path).write_bytes(bytes(out))


def read_blobs(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 + 32:
        raise FormatError(f"checkpoint too short ({len(raw)} bytes)", len(raw))
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("checksum mismatch", len(body))
    magic, version, meta_len = struct.unpack_from("<4sII", body, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 12
    meta = json.loads(body[pos : pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    blobs: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            name_len, ndim = struct.unpack_from("<HB", body, pos)
            pos += 3
            name = body[pos : pos + name_len].decode()
            pos += name_len
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if pos + 8 * n > len(body):
                raise FormatError(f"blob {name!r} runs past the end of the file", pos)
            blobs[name] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    except struct.error as exc:
        raise FormatError(f"truncated blob table: {exc}", pos) from exc
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} trailing bytes after blob table", pos)
    return blobs, meta
