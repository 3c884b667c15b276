"""Procedural stylized locomotion.

Content decides the root trajectory and the limb phase pattern; style
modulates it through a fixed ``StyleParams`` vector per label. Feet are
planned in the world frame (planted during stance, interpolated during
swing) and then expressed in the root facing frame, so clean sequences
have essentially no foot skating.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

from . import features as ft

CONTENTS = ("walk", "run", "hop", "circle_walk")
STYLES = ("neutral", "old", "proud", "crouched", "fast", "tiptoe", "wide", "phone_left")

CONTENT_TEXT = {
    "walk": "a person is walking",
    "run": "a person is running",
    "hop": "a person hops forward",
    "circle_walk": "a person walks in a circle",
}
TEXT_CONTENT = {text: label for label, text in CONTENT_TEXT.items()}

CONTACT_HEIGHT = 0.05
_POSITION_NOISE = 0.002
_SPEED_NOISE = 0.0005


class VocabularyError(ValueError):
    """Unknown content or style label."""


@dataclass(frozen=True)
class StyleParams:
    """Style knobs.

    Ranges: speed_scale [0.5, 1.8]; stride_amplitude [0.5, 1.5];
    posture_pitch_offset [-0.3, 0.6] rad (positive leans forward);
    arm_swing_asymmetry [0, 1] (1 holds the left hand at the ear);
    step_height [0.3, 2.0] (swing clearance multiplier, >1.3 raises heels);
    torso_sway [0, 0.1] m (lateral sway, also widens the stance).
    """

    speed_scale: float
    stride_amplitude: float
    posture_pitch_offset: float
    arm_swing_asymmetry: float
    step_height: float
    torso_sway: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))


STYLE_PARAMS = {
    "neutral": StyleParams(1.0, 1.0, 0.0, 0.0, 1.0, 0.01),
    "old": StyleParams(0.6, 0.6, 0.35, 0.0, 0.5, 0.02),
    "proud": StyleParams(1.0, 1.15, -0.2, 0.0, 1.1, 0.0),
    "crouched": StyleParams(0.8, 0.85, 0.55, 0.0, 0.8, 0.01),
    "fast": StyleParams(1.6, 1.25, 0.1, 0.0, 1.2, 0.01),
    "tiptoe": StyleParams(0.7, 0.6, 0.05, 0.0, 1.7, 0.01),
    "wide": StyleParams(0.9, 1.0, 0.0, 0.0, 1.0, 0.09),
    "phone_left": StyleParams(0.9, 0.9, 0.1, 1.0, 0.9, 0.01),
}


@dataclass(frozen=True)
class _Gait:
    speed: float          # m/frame
    period: float         # frames per gait cycle
    stance: float         # stance fraction of the cycle
    swing_height: float   # m
    foot_phase: tuple     # per-foot phase offsets (left, right)
    bob: float            # root vertical bob amplitude, m
    arm_swing: float      # m
    lean: float           # extra forward pitch, rad
    airborne: bool        # root follows the swing arc (hop)


_GAITS = {
    "walk": _Gait(0.065, 22.0, 0.62, 0.10, (0.0, 0.5), 0.015, 0.18, 0.0, False),
    "run": _Gait(0.15, 14.0, 0.38, 0.18, (0.0, 0.5), 0.04, 0.28, 0.15, False),
    "hop": _Gait(0.045, 14.0, 0.5, 0.14, (0.0, 0.0), 0.0, 0.05, 0.05, True),
    "circle_walk": _Gait(0.065, 22.0, 0.62, 0.10, (0.0, 0.5), 0.015, 0.18, 0.0, False),
}


@dataclass
class MotionSequence:
    frames: np.ndarray      # (F, FEATURE_DIM) float32
    content: str
    style: str
    fps: int = ft.FPS

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def content_text(self) -> str:
        return CONTENT_TEXT[self.content]


def _check_labels(content: str, style: str):
    if content not in CONTENTS:
        raise VocabularyError(f"unknown content {content!r}; expected one of {CONTENTS}")
    if style not in STYLES:
        raise VocabularyError(f"unknown style {style!r}; expected one of {STYLES}")


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


def generate_motion(content: str, style: str, seed: int, num_frames: int = 60) -> MotionSequence:
    """Synthesize one labelled sequence; identical arguments give identical bytes."""
    _check_labels(content, style)
    lo, hi = ft.FRAME_RANGE
    if not lo <= num_frames <= hi:
        raise ValueError(f"num_frames must lie in [{lo}, {hi}], got {num_frames}")

    rng = np.random.default_rng([seed, CONTENTS.index(content), STYLES.index(style)])
    sp = STYLE_PARAMS[style]
    gait = _GAITS[content]

    speed_scale = sp.speed_scale * (1.0 + 0.04 * rng.uniform(-1, 1))
    stride = sp.stride_amplitude * (1.0 + 0.04 * rng.uniform(-1, 1))
    phase0 = rng.uniform(0.0, 1.0)

    v = gait.speed * speed_scale
    period = float(np.clip(gait.period * stride / math.sqrt(speed_scale), 8.0, 40.0))
    stance = gait.stance
    n = num_frames + 1
    turn = 2.0 * math.pi / num_frames if content == "circle_walk" else 0.0

    # Root trajectory on an extended time grid so that stance midpoints
    # falling outside [0, n) can still be located.
    pad = int(math.ceil(2 * period)) + 2
    times = np.arange(-pad, n + pad, dtype=np.float64)
    speed = v * (1.0 + 0.05 * np.sin(4.0 * math.pi * (times / period + phase0)))
    speed = speed + _SPEED_NOISE * rng.standard_normal(len(times))
    heading = turn * times
    dx, dz = ft.rotate_y(0.0, speed, heading)
    pos = np.zeros((len(times), 2))
    pos[1:, 0] = np.cumsum(dx[:-1])
    pos[1:, 1] = np.cumsum(dz[:-1])
    pos -= pos[pad]

    def root_at(t):
        return (np.interp(t, times, pos[:, 0]), np.interp(t, times, pos[:, 1]),
                np.interp(t, times, heading))

    pitch = sp.posture_pitch_offset + gait.lean
    heel = 0.1 * max(0.0, sp.step_height - 1.3)
    foot_ground = 0.02 + heel
    half_width = 0.1 + 0.8 * sp.torso_sway
    swing_h = gait.swing_height * sp.step_height

    t_idx = np.arange(n, dtype=np.float64)
    feet_world = np.zeros((2, n, 3))
    for k, side in enumerate((1.0, -1.0)):
        offset = gait.foot_phase[k]
        # cycle c has stance on [start_c, start_c + stance * period]
        cycles = np.floor(t_idx / period + phase0 + offset)
        cmin, cmax = int(cycles.min()) - 1, int(cycles.max()) + 1
        plants = {}
        for c in range(cmin, cmax + 2):
            start = (c - phase0 - offset) * period
            mid = start + 0.5 * stance * period
            px, pz, th = root_at(mid)
            ox, oz = ft.rotate_y(side * half_width, 0.0, th)
            plants[c] = (px + ox, pz + oz)
        psi = t_idx / period + phase0 + offset - cycles
        for i in range(n):
            c = int(cycles[i])
            if psi[i] < stance:
                x, z = plants[c]
                y = foot_ground
            else:
                u = (psi[i] - stance) / (1.0 - stance)
                # lift and set down vertically, travel in the middle of the swing
                s = _smoothstep(min(max((u - 0.25) / 0.5, 0.0), 1.0))
                (x0, z0), (x1, z1) = plants[c], plants[c + 1]
                x, z = x0 + s * (x1 - x0), z0 + s * (z1 - z0)
                y = foot_ground + swing_h * math.sin(math.pi * u)
            feet_world[k, i] = (x, y, z)

    # root height: posture drop, heel raise, gait bob
    base_h = 0.95 - 0.25 * max(0.0, pitch - 0.15) + heel
    cyc = t_idx / period + phase0
    if gait.airborne:
        psi = cyc - np.floor(cyc)
        u = np.clip((psi - stance) / (1.0 - stance), 0.0, 1.0)
        bob = np.where(psi < stance, -0.03 * np.sin(math.pi * psi / stance),
                       swing_h * np.sin(math.pi * u))
    else:
        bob = gait.bob * np.cos(4.0 * math.pi * cyc)
    root_h = base_h + bob

    rx, rth = pos[pad:pad + n], heading[pad:pad + n]
    local = np.zeros((n, ft.NUM_JOINTS, 3))
    local[:, 0, 1] = root_h
    sway = sp.torso_sway * np.sin(2.0 * math.pi * cyc)
    pelvis = np.stack([sway, root_h - 0.05, np.zeros(n)], axis=1)
    local[:, 7] = pelvis
    cp, spn = math.cos(pitch), math.sin(pitch)
    spine = pelvis + np.array([0.0, 0.35 * cp, 0.35 * spn])
    local[:, 1] = spine
    local[:, 2] = spine + np.array([0.0, 0.25 * math.cos(pitch + 0.05),
                                    0.25 * math.sin(pitch + 0.05)])

    for k, (side, j) in enumerate(((1.0, ft.LEFT_FOOT), (-1.0, ft.RIGHT_FOOT))):
        wx = feet_world[k, :, 0] - rx[:, 0]
        wz = feet_world[k, :, 2] - rx[:, 1]
        lx, lz = ft.rotate_y(wx, wz, -rth)
        local[:, j, 0] = lx
        local[:, j, 1] = feet_world[k, :, 1]
        local[:, j, 2] = lz

    arm = gait.arm_swing * stride
    asym = sp.arm_swing_asymmetry
    for side, j, foot_k in ((1.0, ft.SKELETON.index("left_hand"), 1),
                            (-1.0, ft.SKELETON.index("right_hand"), 0)):
        # each arm swings with the opposite foot
        opp = cyc + gait.foot_phase[foot_k]
        swing = arm * np.sin(2.0 * math.pi * opp)
        hand = spine + np.array([side * 0.2, -0.45, 0.05])
        hand[:, 2] += swing
        if side > 0 and asym > 0:
            phone = spine + np.array([0.12, 0.22, 0.12 + 0.25 * spn])
            hand = (1.0 - asym) * hand + asym * phone
        local[:, j] = hand

    noise = _POSITION_NOISE * rng.standard_normal(local.shape)
    noise[:, 0] = 0.0
    local = local + noise

    root_lin = np.diff(rx, axis=0)
    vx, vz = ft.rotate_y(root_lin[:, 0], root_lin[:, 1], -rth[:-1])
    frames = np.zeros((num_frames, ft.FEATURE_DIM))
    frames[:, ft.ROOT_ROT_VEL] = np.diff(rth)
    frames[:, 1] = vx
    frames[:, 2] = vz
    frames[:, ft.ROOT_HEIGHT] = local[:-1, 0, 1]
    frames[:, ft.POSITIONS] = local[:-1].reshape(num_frames, -1)
    frames[:, ft.VELOCITIES] = np.diff(local, axis=0).reshape(num_frames, -1)
    frames[:, ft.CONTACTS] = (local[:-1, [ft.LEFT_FOOT, ft.RIGHT_FOOT], 1] < CONTACT_HEIGHT)
    return MotionSequence(frames.astype(np.float32), content, style)
