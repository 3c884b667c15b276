import hashlib
import math

import numpy as np
import pytest

from stylefuse.motion import (CONTENTS, FEATURE_DIM, STYLES, CorpusConfig, CorpusConfigError,
                              MotionFormatError, MotionSequence, VocabularyError, build_corpus,
                              decode_motion, encode_motion, foot_skate_frames, generate_motion,
                              load_corpus, load_motion, save_motion, write_corpus)
from stylefuse.motion import features as ft


def test_shape_and_circle_closure():
    m = generate_motion("walk", "neutral", 0, 80)
    assert m.frames.shape == (80, 54) == (80, FEATURE_DIM)
    circle = generate_motion("circle_walk", "neutral", 0, 80)
    _, pos = ft.root_trajectory(circle.frames)
    # close the loop with the last frame's own velocity step
    heading = np.cumsum(circle.frames[:, ft.ROOT_ROT_VEL])[-2]
    dx, dz = ft.rotate_y(*circle.frames[-1, ft.ROOT_LIN_VEL], heading)
    end = pos[-1] + (dx, dz)
    assert np.linalg.norm(end) < 0.5


def test_generate_is_deterministic():
    a = generate_motion("hop", "tiptoe", 11, 60)
    b = generate_motion("hop", "tiptoe", 11, 60)
    assert a.frames.tobytes() == b.frames.tobytes()
    assert a.frames.dtype == np.float32


def test_generate_rejects_unknown_labels():
    with pytest.raises(VocabularyError):
        generate_motion("dance", "neutral", 0)
    with pytest.raises(VocabularyError):
        generate_motion("walk", "angry", 0)


def test_corpus_counts_and_stratification():
    corpus = build_corpus(CorpusConfig(samples_per_cell=16))
    assert len(corpus) == 512
    train, test = corpus.split("train"), corpus.split("test")
    assert (len(train), len(test)) == (416, 96)
    cells = {(r.content, r.style) for r in test}
    assert cells == {(r.content, r.style) for r in train}
    assert len(cells) == len(CONTENTS) * len(STYLES)


@pytest.mark.parametrize("kwargs", [{"samples_per_cell": 2}, {"test_fraction": 1.0},
                                    {"judge_samples_per_cell": -1}, {"styles": ("angry",)}])
def test_corpus_config_errors(kwargs):
    with pytest.raises(CorpusConfigError):
        build_corpus(CorpusConfig(**kwargs))


def _tree_hashes(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_corpus_regeneration_identical_bytes(tmp_path):
    cfg = CorpusConfig(samples_per_cell=4, judge_samples_per_cell=1, seed=5)
    write_corpus(build_corpus(cfg), tmp_path / "a")
    write_corpus(build_corpus(cfg), tmp_path / "b")
    assert _tree_hashes(tmp_path / "a") == _tree_hashes(tmp_path / "b")
    loaded = load_corpus(tmp_path / "a")
    assert len(loaded.split("judge")) == 32
    assert all(r.path for r in loaded.records)


def test_motion_file_roundtrip(tmp_path):
    m = generate_motion("run", "old", 3)
    path = save_motion(m, tmp_path / "x.smo")
    back = load_motion(path)
    assert back.frames.tobytes() == m.frames.tobytes()
    assert (back.content, back.style, back.fps) == (m.content, m.style, m.fps)


def test_motion_file_rejects_corruption():
    buf = encode_motion(generate_motion("run", "old", 3))
    with pytest.raises(MotionFormatError):
        decode_motion(b"XXXX" + buf[4:])
    with pytest.raises(MotionFormatError):
        decode_motion(buf[:-4])


def _static_pose(num_frames=50):
    base = generate_motion("walk", "neutral", 0).frames[0].copy()
    frames = np.repeat(base[None], num_frames, axis=0)
    frames[:, ft.ROOT_ROT_VEL] = 0.0
    frames[:, ft.ROOT_LIN_VEL] = 0.0
    return frames


def test_foot_skate_static_is_zero():
    assert foot_skate_frames(_static_pose()) == 0.0


def test_foot_skate_pinned_feet_translating_root_is_one():
    frames = _static_pose()
    pos = ft.joint_positions(frames).copy()
    pos[:, [ft.LEFT_FOOT, ft.RIGHT_FOOT], 1] = 0.0
    frames[:, ft.POSITIONS] = pos.reshape(len(frames), -1)
    frames[:, ft.ROOT_LIN_VEL] = (0.0, 0.05)
    assert foot_skate_frames(frames) == 1.0


def _skate_oracle(frames, h_eps=0.05, v_eps=0.01):
    """Per-frame loop: integrate the root, place each foot in the world, count slides."""
    frames = np.asarray(frames, dtype=np.float64)
    heading, x, z = 0.0, 0.0, 0.0
    world = []
    for t in range(len(frames)):
        feet = []
        for j in (ft.LEFT_FOOT, ft.RIGHT_FOOT):
            lx, ly, lz = frames[t, 4 + 3 * j:7 + 3 * j]
            c, s = math.cos(heading), math.sin(heading)
            feet.append((c * lx + s * lz + x, ly, -s * lx + c * lz + z))
        world.append(feet)
        vx, vz = frames[t, 1], frames[t, 2]
        c, s = math.cos(heading), math.sin(heading)
        x, z = x + c * vx + s * vz, z - s * vx + c * vz
        heading += frames[t, 0]
    count = 0
    for t in range(len(frames) - 1):
        slid = False
        for k in range(2):
            a, b = world[t][k], world[t + 1][k]
            if a[1] < h_eps and math.hypot(b[0] - a[0], b[2] - a[2]) > v_eps:
                slid = True
        count += slid
    return count / (len(frames) - 1)


@pytest.mark.parametrize("content", CONTENTS)
def test_foot_skate_matches_loop_oracle(content):
    frames = generate_motion(content, "neutral", 0).frames
    assert foot_skate_frames(frames) == _skate_oracle(frames)


def test_motion_sequence_content_text():
    m = MotionSequence(np.zeros((40, FEATURE_DIM), np.float32), "walk", "old")
    assert m.content_text == "a person is walking"
