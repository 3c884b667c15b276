"""Binary motion files.

Layout (little-endian)::

    magic  b"SFMO"
    u16    layout version
    u16    joint count J
    u32    frame count F
    u32    feature dim D
    u16    fps
    u16 + utf-8   content label
    u16 + utf-8   style label
    F * D float32 frames, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import features as ft
from .synth import MotionSequence

MAGIC = b"SFMO"
_HEAD = struct.Struct("<4sHHIIH")


class MotionFormatError(ValueError):
    pass


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_motion(m: MotionSequence) -> bytes:
    frames = np.asarray(m.frames, dtype="<f4")
    head = _HEAD.pack(MAGIC, ft.LAYOUT_VERSION, ft.NUM_JOINTS, frames.shape[0],
                      frames.shape[1], int(m.fps))
    return head + _pack_str(m.content) + _pack_str(m.style) + frames.tobytes(order="C")


def decode_motion(buf: bytes) -> MotionSequence:
    if len(buf) < _HEAD.size or buf[:4] != MAGIC:
        raise MotionFormatError("not a motion file (bad magic)")
    magic, version, joints, frames, dim, fps = _HEAD.unpack_from(buf, 0)
    if version != ft.LAYOUT_VERSION:
        raise MotionFormatError(f"unsupported layout version {version}")
    if joints != ft.NUM_JOINTS or dim != ft.FEATURE_DIM:
        raise MotionFormatError(f"layout mismatch: J={joints}, D={dim}")
    off = _HEAD.size
    labels = []
    for _ in range(2):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        labels.append(buf[off:off + n].decode("utf-8"))
        off += n
    expected = frames * dim * 4
    if len(buf) - off != expected:
        raise MotionFormatError(f"payload is {len(buf) - off} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<f4", count=frames * dim, offset=off)
    return MotionSequence(data.reshape(frames, dim).astype(np.float32), labels[0], labels[1], fps)


def save_motion(m: MotionSequence, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_motion(m))
    return path


def load_motion(path) -> MotionSequence:
    return decode_motion(Path(path).read_bytes())
