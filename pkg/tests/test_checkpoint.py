from collections import OrderedDict

import numpy as np
import pytest

from stylefuse.checkpoint import (CheckpointError, decode_checkpoint, encode_checkpoint,
                                  file_sha256, load_checkpoint, prefixed, save_checkpoint,
                                  strip_prefix)


def _tensors():
    rng = np.random.default_rng(0)
    return OrderedDict([("a.w", rng.standard_normal((3, 2)).astype(np.float32)),
                        ("a.b", np.zeros(2, np.float32)),
                        ("scale", np.asarray(1.5, np.float32))])


def test_roundtrip_preserves_values_order_and_meta():
    tensors, meta = decode_checkpoint(encode_checkpoint(_tensors(), {"kind": "x", "n": [1, 2]}))
    assert list(tensors) == ["a.w", "a.b", "scale"]
    for k, v in _tensors().items():
        assert np.array_equal(tensors[k], v) and tensors[k].shape == v.shape
    assert meta == {"kind": "x", "n": [1, 2]}


def test_encoding_is_deterministic(tmp_path):
    a = save_checkpoint(tmp_path / "a.ckpt", _tensors(), {"z": 1, "a": 2})
    b = save_checkpoint(tmp_path / "b.ckpt", _tensors(), {"a": 2, "z": 1})
    assert file_sha256(a) == file_sha256(b)


def test_corruption_is_detected():
    buf = encode_checkpoint(_tensors())
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"NOPE" + buf[4:])
    with pytest.raises(CheckpointError):
        decode_checkpoint(buf + b"\0")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.ckpt")


def test_prefix_helpers():
    merged = {**prefixed("x", {"w": 1}), **prefixed("y", {"w": 2})}
    assert dict(strip_prefix("x", merged)) == {"w": 1}
    assert dict(strip_prefix("y", merged)) == {"w": 2}
