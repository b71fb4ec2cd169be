"""Synthetic walking sequences with known ground truth.

Legs swing sinusoidally in the sagittal plane with a half-period offset
between sides, knees flex during swing, ankles keep the soles level, and arms
hang and swing against the legs.  Each walker moves at constant speed along
a circular arc (a per-sequence turn rate, zero for straight paths) with the
body facing the direction of travel; the pelvis height is set per frame so the lowest sole point touches
the z = 0 ground plane (cyclists keep the pelvis level instead).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .body_model import BodyModel, canonical_components, default_model, fk_batch, log_map, rodrigues
from .data import ACTIONS, PoseSequence, wrap_angle
from .errors import ConfigInvalid


@dataclass
class SynthConfig:
    n_sequences: int = 60
    frames: int = 40
    fps: float = 6.0
    speed: float = 1.4
    speed_jitter: float = 0.15
    period: float = 8.0
    amplitude: float = 0.3
    knee_amplitude: float = 0.45
    arm_amplitude: float = 0.35
    noise: float = 0.0
    pose_noise: float = 0.0
    heading: float | None = None
    turn_rate: float = 0.3         # max |heading rate| in rad/s, drawn per sequence
    area: float = 20.0
    seed: int = 0
    actions: dict = field(default_factory=lambda: {"walk": 1.0})

    def validate(self) -> None:
        if self.period < 2:
            raise ConfigInvalid(f"gait period must be at least 2 frames, got {self.period}")
        if self.n_sequences < 1 or self.frames < 1:
            raise ConfigInvalid("n_sequences and frames must be positive")
        if self.fps <= 0 or self.speed < 0 or self.turn_rate < 0 or self.noise < 0 or self.pose_noise < 0:
            raise ConfigInvalid("fps must be positive; speed and noise non-negative")
        unknown = set(self.actions) - set(ACTIONS)
        if unknown:
            raise ConfigInvalid(f"unknown actions {sorted(unknown)}")
        if not self.actions or any(p < 0 for p in self.actions.values()) or sum(self.actions.values()) <= 0:
            raise ConfigInvalid("action mix must have non-negative weights with positive sum")

    def to_dict(self) -> dict:
        return asdict(self)


def _rx(a):
    return rodrigues(np.stack([a, np.zeros_like(a), np.zeros_like(a)], axis=-1))


def _ry(a):
    return rodrigues(np.stack([np.zeros_like(a), a, np.zeros_like(a)], axis=-1))


def gait_pose(phase: np.ndarray, cfg: SynthConfig, action: str = "walk") -> np.ndarray:
    """Local axis-angle pose (T, 72) for gait phase angles (T,), zero heading."""
    T = phase.shape[0]
    pose = np.zeros((T, 24, 3))
    hip_amp, knee_amp, arm_amp = cfg.amplitude, cfg.knee_amplitude, cfg.arm_amplitude
    arm_flex = np.zeros(2)
    arm_swing = np.array([1.0, 1.0])
    elbow = np.zeros(2)
    if action == "cycling":
        hip_amp, knee_amp = 0.8, 1.2
        arm_flex[:] = 0.7
        arm_swing[:] = 0.0
    elif action == "push-bike":
        arm_flex[:] = 0.6
        arm_swing[:] = 0.0
    elif action == "phone":
        arm_swing[0] = 0.0
        elbow[0] = 2.2
    elif action == "cup":
        arm_swing[1] = 0.0
        elbow[1] = 1.4
    elif action == "carry-left":
        arm_swing[0] = 0.2

    hip = hip_amp * np.sin(phase)
    for side, sign in ((0, 1.0), (1, -1.0)):
        flex = sign * hip
        knee = knee_amp * np.maximum(0.0, sign * np.cos(phase)) ** 2
        pose[:, 1 + side, 0] = flex          # hips (1, 2)
        pose[:, 4 + side, 0] = -knee         # knees (4, 5)
        pose[:, 7 + side, 0] = knee - flex   # ankles (7, 8): keep soles level

        lower = _ry(np.full(T, sign * math.pi / 2))
        swing = arm_flex[side] - sign * arm_amp * arm_swing[side] * np.sin(phase)
        shoulder = _rx(swing) @ lower
        pose[:, 16 + side] = log_map(shoulder)
        if elbow[side]:
            # flex the forearm forward-up about the world lateral axis
            local_axis = np.swapaxes(shoulder, -1, -2) @ np.array([1.0, 0.0, 0.0])
            pose[:, 18 + side] = local_axis * elbow[side]
    return pose.reshape(T, 72)


def arc_offsets(heading: float, turn: float, step: float, t: np.ndarray) -> np.ndarray:
    """Planar displacement after t frames at ``step`` m/frame, turning ``turn`` rad/frame.

    Heading 0 faces +y; positive turns are counter-clockwise seen from above.
    """
    t = np.asarray(t, dtype=float)
    if abs(turn) < 1e-12:
        return np.outer(t * step, [-math.sin(heading), math.cos(heading)])
    h = heading + turn * t
    r = step / turn
    return np.stack([r * (np.cos(h) - math.cos(heading)), r * (np.sin(h) - math.sin(heading))], axis=1)


def ground_offset(pose: np.ndarray, model: BodyModel) -> np.ndarray:
    """Vertical translation that puts the lowest sole point at z = 0."""
    T = pose.shape[0]
    joints, glob, _ = fk_batch(np.zeros((T, 3)), pose, model)
    ank = list(model.joint_ids.ankle)
    rest_ank = model.rest_joints[ank]
    pts = []
    for ref in (model.heel_points, model.toe_points):
        pts.append(joints[:, ank] + np.einsum("nsab,sb->nsa", glob[:, ank], ref - rest_ank))
    lowest = np.min(np.concatenate(pts, axis=1)[..., 2], axis=1)
    return -lowest


def synth_gait(cfg: SynthConfig, model: BodyModel | None = None):
    """Generate (noisy sequences, noiseless ground truth), deterministic per seed."""
    cfg.validate()
    model = model or default_model(with_mesh=False)
    rng = np.random.default_rng(cfg.seed)
    # separate stream so the noise level never changes the clean sequences
    noise_rng = np.random.default_rng([cfg.seed, 1])
    names = sorted(cfg.actions)
    probs = np.array([cfg.actions[a] for a in names], dtype=float)
    probs /= probs.sum()
    noisy, clean = [], []
    t = np.arange(cfg.frames)
    omega = 2.0 * math.pi / cfg.period
    for k in range(cfg.n_sequences):
        action = names[rng.choice(len(names), p=probs)]
        heading = cfg.heading if cfg.heading is not None else rng.uniform(-math.pi, math.pi)
        speed = cfg.speed * (1.0 + rng.uniform(-cfg.speed_jitter, cfg.speed_jitter))
        if action == "cycling":
            speed *= 2.0
        elif action == "push-bike":
            speed *= 0.8
        phase0 = rng.uniform(0.0, 2.0 * math.pi)
        start = rng.uniform(-cfg.area / 2, cfg.area / 2, size=2)
        turn = rng.uniform(-cfg.turn_rate, cfg.turn_rate) / cfg.fps    # rad per frame

        pose = gait_pose(omega * t + phase0, cfg, action)
        head = heading + turn * t
        pose[:, 2] = head
        trans = np.zeros((cfg.frames, 3))
        trans[:, :2] = start + arc_offsets(heading, turn, speed / cfg.fps, t)
        offset = ground_offset(pose, model)
        # a seated rider keeps the pelvis level; the feet circle above ground
        trans[:, 2] = offset.max() if action == "cycling" else offset
        shape = np.tile(rng.normal(0.0, 0.5, size=10), (cfg.frames, 1))

        noisy_trans = trans + noise_rng.normal(0.0, cfg.noise, size=trans.shape) if cfg.noise else trans.copy()
        noisy_pose = pose + noise_rng.normal(0.0, cfg.pose_noise, size=pose.shape) if cfg.pose_noise else pose.copy()
        common = dict(
            seq_id=f"syn{k:04d}",
            person_id="0",
            frame_idx=t.copy(),
            timestamps=t / cfg.fps,
            shape=shape,
            ground_z=np.zeros(cfg.frames),
            action=action,
        )
        clean.append(PoseSequence(trans=trans, pose=wrap_angle(pose), **common))
        noisy.append(PoseSequence(trans=noisy_trans, pose=wrap_angle(noisy_pose), **common))
    return noisy, clean


def inject_outliers(sequences, fraction: float = 0.1, jump_range=(1.2, 2.0), seed: int = 0):
    """Corrupt a fraction of transitions with translation jumps or root flips.

    Each corrupted transition displaces its destination frame by a horizontal
    jump of ``jump_range`` meters or turns its root orientation by pi about the
    vertical, mimicking label-optimization failures.
    """
    rng = np.random.default_rng(seed)
    out = []
    for seq in sequences:
        trans, pose = seq.trans.copy(), seq.pose.copy()
        for t in range(1, len(seq)):
            if rng.random() >= fraction:
                continue
            if rng.random() < 0.5:
                ang = rng.uniform(0.0, 2.0 * math.pi)
                trans[t, :2] += rng.uniform(*jump_range) * np.array([math.cos(ang), math.sin(ang)])
            else:
                root = rodrigues(canonical_components(pose[t, :3]))
                flipped = rodrigues(np.array([0.0, 0.0, math.pi])) @ root
                pose[t, :3] = wrap_angle(log_map(flipped))
        out.append(PoseSequence(seq.seq_id, seq.person_id, seq.frame_idx, seq.timestamps,
                                trans, pose, seq.shape, seq.ground_z, seq.action))
    return out
