"""Repo-wide checkpoint container: a JSON header plus a named float32 tensor table.

Layout (little-endian)::

    magic  b"SFCK"
    u16    format version
    u32    header length, then UTF-8 JSON (sorted keys)
    u32    tensor count
    per tensor:
        u16 + utf-8 name
        u8 ndim, then ndim * u32 dims
        float32 data, row-major

Identical tensors and metadata always serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"SFCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def encode_checkpoint(tensors: dict, meta: dict | None = None) -> bytes:
    header = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(header)), header,
             struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes):
    """Returns (OrderedDict name -> float32 array, metadata dict)."""
    if buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 10
    meta = json.loads(buf[off:off + hlen].decode("utf-8"))
    off += hlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        tensors[name] = arr.astype(np.float32)
    if off != len(buf):
        raise CheckpointError("trailing bytes after tensor table")
    return tensors, meta


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors, meta))
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def prefixed(prefix: str, state: dict) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((f"{prefix}.{k}", v) for k, v in state.items())


def strip_prefix(prefix: str, tensors: dict) -> "OrderedDict[str, np.ndarray]":
    head = prefix + "."
    return OrderedDict((k[len(head):], v) for k, v in tensors.items() if k.startswith(head))
