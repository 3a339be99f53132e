"""Versioned binary container: 8-byte magic, version, JSON header, raw arrays.

Layout::

    magic (8 bytes) | version (u32 LE) | header length (u64 LE) | header JSON | array bytes

The header lists every array's name, dtype, shape, offset and length.  The
encoding is byte-stable: identical content always produces identical files.
"""

from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class ContainerError(ValueError):
    pass


def encode(magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    index = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        dtype = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        raw = a.astype(dtype, copy=False).tobytes()
        index.append({"name": name, "dtype": dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True,
                        separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(_PREFIX.pack(magic, VERSION, len(header)))
    buf.write(header)
    for raw in blobs:
        buf.write(raw)
    return buf.getvalue()


def decode(data: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size:
        raise ContainerError("file too short for a container header")
    got, version, hlen = _PREFIX.unpack_from(data)
    if got != magic:
        raise ContainerError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    start = _PREFIX.size
    header = json.loads(data[start:start + hlen])
    body = start + hlen
    arrays = {}
    for item in header["arrays"]:
        lo = body + item["offset"]
        raw = data[lo:lo + item["nbytes"]]
        if len(raw) != item["nbytes"]:
            raise ContainerError(f"truncated array {item['name']}")
        arrays[item["name"]] = np.frombuffer(raw, dtype=np.dtype(item["dtype"])).reshape(item["shape"]).copy()
    return header["meta"], arrays


def write(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """Atomically write a container to ``path``; returns the encoded bytes."""
    data = encode(magic, meta, arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return data


def read(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes(), magic)
