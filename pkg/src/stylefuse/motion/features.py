"""Root-velocity feature layout and helpers that read it back.

Per-frame layout (D = 6J + 6, J = 8 -> 54):

    [0]            root angular velocity about +y (rad/frame)
    [1:3]          root linear velocity x, z in the root facing frame (m/frame)
    [3]            root height (m)
    [4:4+3J]       joint positions in the root facing frame, y absolute (m)
    [4+3J:4+6J]    joint velocities, forward difference of the positions (m/frame)
    [4+6J:6+6J]    left/right foot contact flags in {0, 1}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAYOUT_VERSION = 1
FPS = 20
FRAME_RANGE = (40, 200)


@dataclass(frozen=True)
class Skeleton:
    names: tuple = ("root", "spine", "head", "left_hand", "right_hand",
                    "left_foot", "right_foot", "pelvis")
    parents: tuple = (-1, 7, 1, 1, 1, 7, 7, 0)
    offsets: tuple = field(default=(
        (0.0, 0.0, 0.0),
        (0.0, 0.35, 0.0),
        (0.0, 0.25, 0.0),
        (0.2, -0.15, 0.0),
        (-0.2, -0.15, 0.0),
        (0.1, -0.9, 0.0),
        (-0.1, -0.9, 0.0),
        (0.0, -0.05, 0.0),
    ))

    @property
    def num_joints(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def validate(self):
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"skeleton needs exactly one root, found {roots}")
        for i in range(self.num_joints):
            seen, j = set(), i
            while j >= 0:
                if j in seen:
                    raise ValueError(f"cycle through joint {self.names[i]}")
                seen.add(j)
                j = self.parents[j]
        if not np.all(np.isfinite(np.asarray(self.offsets))):
            raise ValueError("non-finite rest offset")


SKELETON = Skeleton()
NUM_JOINTS = SKELETON.num_joints
LEFT_FOOT = SKELETON.index("left_foot")
RIGHT_FOOT = SKELETON.index("right_foot")

ROOT_ROT_VEL = 0
ROOT_LIN_VEL = slice(1, 3)
ROOT_HEIGHT = 3
POSITIONS = slice(4, 4 + 3 * NUM_JOINTS)
VELOCITIES = slice(4 + 3 * NUM_JOINTS, 4 + 6 * NUM_JOINTS)
CONTACTS = slice(4 + 6 * NUM_JOINTS, 6 + 6 * NUM_JOINTS)
FEATURE_DIM = 6 + 6 * NUM_JOINTS


def rotate_y(x: np.ndarray, z: np.ndarray, theta):
    """Rotate facing-frame (x, z) by heading ``theta`` into the world frame."""
    c, s = np.cos(theta), np.sin(theta)
    return c * x + s * z, -s * x + c * z


def joint_positions(frames: np.ndarray) -> np.ndarray:
    return frames[:, POSITIONS].reshape(len(frames), NUM_JOINTS, 3)


def root_trajectory(frames: np.ndarray):
    """Integrate root velocities; returns (heading[F], position_xz[F, 2])."""
    n = len(frames)
    heading = np.zeros(n)
    pos = np.zeros((n, 2))
    for t in range(n - 1):
        heading[t + 1] = heading[t] + frames[t, ROOT_ROT_VEL]
        vx, vz = frames[t, ROOT_LIN_VEL]
        dx, dz = rotate_y(vx, vz, heading[t])
        pos[t + 1] = pos[t] + (dx, dz)
    return heading, pos


def world_joint_positions(frames: np.ndarray) -> np.ndarray:
    heading, pos = root_trajectory(frames)
    local = joint_positions(frames)
    wx, wz = rotate_y(local[..., 0], local[..., 2], heading[:, None])
    out = np.empty_like(local)
    out[..., 0] = wx + pos[:, 0:1]
    out[..., 1] = local[..., 1]
    out[..., 2] = wz + pos[:, 1:2]
    return out


def foot_skate_frames(frames: np.ndarray, h_eps: float = 0.05, v_eps: float = 0.01) -> float:
    """Fraction of frame transitions where a grounded foot slides horizontally.

    A transition t -> t+1 counts when, for either foot, the height at t is
    below ``h_eps`` and the world-frame horizontal displacement exceeds
    ``v_eps``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) < 2:
        return 0.0
    world = world_joint_positions(frames)
    feet = world[:, [LEFT_FOOT, RIGHT_FOOT]]
    step = np.linalg.norm(feet[1:, :, [0, 2]] - feet[:-1, :, [0, 2]], axis=-1)
    grounded = feet[:-1, :, 1] < h_eps
    skating = np.any(grounded & (step > v_eps), axis=1)
    return float(skating.mean())


def mean_root_speed(frames: np.ndarray) -> float:
    return float(np.linalg.norm(frames[:, ROOT_LIN_VEL], axis=1).mean())
