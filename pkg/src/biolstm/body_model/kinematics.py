"""Forward kinematics, skinning, and the derived gait geometry.

The batched functions (``*_batch``) operate on arrays with a leading sample
axis and come with reverse-mode companions (``*_vjp``) used by the training
objective.  The single-state wrappers at the bottom serve evaluation and the
command line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateSegment, DimensionMismatch, MeshUnavailable
from .model import NUM_JOINTS, NUM_POSE, NUM_SHAPE, BodyModel
from .rotations import canonical_components, rodrigues, rodrigues_vjp

MIN_SEGMENT = 1e-6
UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class BodyState:
    """One pedestrian at one frame: translation (m), pose (rad), shape."""

    trans: np.ndarray
    pose: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        for name, size in (("trans", 3), ("pose", NUM_POSE), ("shape", NUM_SHAPE)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (size,):
                raise DimensionMismatch(f"{name} must have {size} entries, got {arr.shape}")
            object.__setattr__(self, name, arr)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.trans, self.pose, self.shape])

    @classmethod
    def from_vector(cls, v) -> BodyState:
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:75], v[75:85])


@dataclass(frozen=True)
class PosedBody:
    joints: np.ndarray            # (24, 3)
    joint_rotations: np.ndarray   # (24, 3, 3) global
    vertices: np.ndarray | None = None


@dataclass
class FKCache:
    pose: np.ndarray      # (N, 24, 3) canonical axis-angles
    local: np.ndarray     # (N, 24, 3, 3)
    glob: np.ndarray      # (N, 24, 3, 3)


def fk_batch(trans: np.ndarray, pose: np.ndarray, model: BodyModel):
    """Global joint positions and rotations for a batch of states.

    trans (N, 3), pose (N, 72) -> joints (N, 24, 3), rotations (N, 24, 3, 3).
    """
    trans = np.asarray(trans, dtype=float)
    aa = canonical_components(np.asarray(pose, dtype=float)).reshape(-1, NUM_JOINTS, 3)
    n = aa.shape[0]
    local = rodrigues(aa)
    offsets = model.bone_offsets
    glob = np.empty_like(local)
    joints = np.empty((n, NUM_JOINTS, 3))
    glob[:, 0] = local[:, 0]
    joints[:, 0] = offsets[0] + trans
    for j in range(1, NUM_JOINTS):
        p = model.parents[j]
        glob[:, j] = glob[:, p] @ local[:, j]
        joints[:, j] = joints[:, p] + glob[:, p] @ offsets[j]
    return joints, glob, FKCache(aa, local, glob)


def fk_vjp(grad_joints: np.ndarray, grad_rot: np.ndarray, cache: FKCache, model: BodyModel):
    """Reverse pass of ``fk_batch``: returns (d trans, d pose)."""
    d_joints = np.array(grad_joints, dtype=float, copy=True)
    d_glob = np.array(grad_rot, dtype=float, copy=True)
    offsets = model.bone_offsets
    d_local = np.zeros_like(cache.local)
    for j in range(NUM_JOINTS - 1, 0, -1):
        p = model.parents[j]
        d_joints[:, p] += d_joints[:, j]
        d_glob[:, p] += d_joints[:, j][:, :, None] * offsets[j][None, None, :]
        d_glob[:, p] += d_glob[:, j] @ np.swapaxes(cache.local[:, j], -1, -2)
        d_local[:, j] = np.swapaxes(cache.glob[:, p], -1, -2) @ d_glob[:, j]
    d_local[:, 0] = d_glob[:, 0]
    d_pose = rodrigues_vjp(cache.pose, d_local).reshape(-1, NUM_POSE)
    return d_joints[:, 0].copy(), d_pose


def skin(joints: np.ndarray, glob: np.ndarray, model: BodyModel) -> np.ndarray:
    """Linear blend skinning of the rest mesh; joints/glob carry a batch axis."""
    if model.mesh is None:
        raise MeshUnavailable("body model has no mesh data")
    rest_v = model.mesh.rest_vertices
    # per-joint transform of each rest vertex: G_j (v - J_j^rest) + p_j
    local_v = rest_v[None, :, :] - model.rest_joints[:, None, :]           # (24, V, 3)
    moved = np.einsum("njab,jvb->njva", glob, local_v) + joints[:, :, None, :]
    return np.einsum("vj,njva->nva", model.mesh.skin_weights, moved)


# --- frontal-plane symmetry angles -------------------------------------------

def _lateral_direction(root_rot: np.ndarray, model: BodyModel):
    """Horizontal unit vector toward the body's left, and the raw vector."""
    raw = root_rot @ model.lateral_axis
    u = raw - raw[..., 2:3] * UP
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(norm < MIN_SEGMENT):
        raise DegenerateSegment("body lateral axis is vertical; frontal plane undefined")
    return u / norm, u, norm


def _segment_pairs(model: BodyModel):
    ids = model.joint_ids
    # (start, end) for left leg, right leg, left arm, right arm
    return [
        (ids.hip[0], ids.knee[0]),
        (ids.hip[1], ids.knee[1]),
        (ids.shoulder[0], ids.elbow[0]),
        (ids.shoulder[1], ids.elbow[1]),
    ]


def angles_batch(joints: np.ndarray, glob: np.ndarray, model: BodyModel):
    """Signed frontal-plane angles (N, 4): leg1, leg2, sho1, sho2.

    Each angle is measured from the downward vertical, positive toward the
    body's left, with atan2 of the segment's lateral and downward components.
    """
    lat, _, _ = _lateral_direction(glob[:, 0], model)
    out = np.empty((joints.shape[0], 4))
    for k, (a, b) in enumerate(_segment_pairs(model)):
        v = joints[:, b] - joints[:, a]
        if np.any(np.linalg.norm(v, axis=-1) < MIN_SEGMENT):
            raise DegenerateSegment(f"segment {a}->{b} has near-zero length")
        side = np.sum(v * lat, axis=-1)
        down = -v[:, 2]
        out[:, k] = np.arctan2(side, down)
    return out


def angles_vjp(grad_angles: np.ndarray, joints: np.ndarray, glob: np.ndarray, model: BodyModel):
    """Reverse pass of ``angles_batch``: gradients on joints and global rotations."""
    lat, raw, norm = _lateral_direction(glob[:, 0], model)
    d_joints = np.zeros_like(joints)
    d_lat = np.zeros_like(lat)
    for k, (a, b) in enumerate(_segment_pairs(model)):
        v = joints[:, b] - joints[:, a]
        side = np.sum(v * lat, axis=-1)
        down = -v[:, 2]
        r2 = side * side + down * down
        g = grad_angles[:, k]
        g_side = g * down / r2
        g_down = -g * side / r2
        dv = g_side[:, None] * lat
        dv[:, 2] -= g_down
        d_joints[:, b] += dv
        d_joints[:, a] -= dv
        d_lat += g_side[:, None] * v
    # lat = u / |u|, u = P R0 axis with P removing the vertical component
    d_u = (d_lat - np.sum(d_lat * lat, axis=-1, keepdims=True) * lat) / norm
    d_u[:, 2] = 0.0
    d_glob = np.zeros_like(glob)
    d_glob[:, 0] = d_u[:, :, None] * model.lateral_axis[None, None, :]
    return d_joints, d_glob


# --- foot clearance ------------------------------------------------------------

def _sole_points(joints, glob, model: BodyModel):
    ank = list(model.joint_ids.ankle)
    rest_ank = model.rest_joints[ank]
    heel_off = model.heel_points - rest_ank
    toe_off = model.toe_points - rest_ank
    p = joints[:, ank]            # (N, 2, 3)
    G = glob[:, ank]              # (N, 2, 3, 3)
    heel = p + np.einsum("nsab,sb->nsa", G, heel_off)
    toe = p + np.einsum("nsab,sb->nsa", G, toe_off)
    return heel, toe, heel_off, toe_off


def clearance_batch(joints, glob, model: BodyModel, ground_z):
    """Heel height above ground D (N, 2) and sole pitch alpha (N, 2).

    alpha is positive when the toe is above the heel.
    """
    heel, toe, _, _ = _sole_points(joints, glob, model)
    ground = np.asarray(ground_z, dtype=float).reshape(-1, 1)
    D = heel[..., 2] - ground
    seg = toe - heel
    horiz = np.linalg.norm(seg[..., :2], axis=-1)
    if np.any(np.hypot(horiz, seg[..., 2]) < MIN_SEGMENT):
        raise DegenerateSegment("heel and toe coincide")
    alpha = np.arctan2(seg[..., 2], horiz)
    return D, alpha


def clearance_vjp(grad_D, grad_alpha, joints, glob, model: BodyModel):
    heel, toe, heel_off, toe_off = _sole_points(joints, glob, model)
    seg = toe - heel
    horiz = np.linalg.norm(seg[..., :2], axis=-1)
    vert = seg[..., 2]
    r2 = horiz * horiz + vert * vert
    g_vert = grad_alpha * horiz / r2
    g_horiz = -grad_alpha * vert / r2
    d_seg = np.zeros_like(seg)
    safe = np.where(horiz > 0, horiz, 1.0)
    d_seg[..., :2] = (g_horiz / safe)[..., None] * seg[..., :2]
    d_seg[..., 2] = g_vert
    d_heel = -d_seg
    d_heel[..., 2] += grad_D
    d_toe = d_seg
    ank = list(model.joint_ids.ankle)
    d_joints = np.zeros_like(joints)
    d_glob = np.zeros_like(glob)
    d_joints[:, ank] += d_heel + d_toe
    d_glob[:, ank] += np.einsum("nsa,sb->nsab", d_heel, heel_off)
    d_glob[:, ank] += np.einsum("nsa,sb->nsab", d_toe, toe_off)
    return d_joints, d_glob


# --- single-state API ------------------------------------------------------------

def forward_kinematics(state: BodyState, model: BodyModel, include_mesh: bool = False) -> PosedBody:
    if include_mesh and model.mesh is None:
        raise MeshUnavailable("include_mesh requested but the body model has no mesh")
    shaped = model.shaped(state.shape)
    joints, glob, _ = fk_batch(state.trans[None], state.pose[None], shaped)
    verts = skin(joints, glob, shaped)[0] if include_mesh else None
    return PosedBody(joints[0], glob[0], verts)


def leg_shoulder_angles(posed: PosedBody, model: BodyModel) -> dict[str, float]:
    ang = angles_batch(posed.joints[None], posed.joint_rotations[None], model)[0]
    return dict(zip(("leg1", "leg2", "sho1", "sho2"), map(float, ang)))


def foot_clearance(posed: PosedBody, model: BodyModel, ground_z: float) -> dict[str, dict[str, float]]:
    D, alpha = clearance_batch(posed.joints[None], posed.joint_rotations[None], model, [ground_z])
    return {
        side: {"D": float(D[0, s]), "alpha": float(alpha[0, s])}
        for s, side in enumerate(("left", "right"))
    }
