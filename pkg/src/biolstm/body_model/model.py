"""Kinematic body template: 24-joint tree, optional skinned mesh, foot geometry.

World convention: z points up (ground normal).  The built-in template is
defined with x toward the body's left and y forward, so a zero root rotation
stands the body upright facing +y with the soles on z = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigInvalid, DataIOError

NUM_JOINTS = 24
NUM_POSE = 72
NUM_SHAPE = 10
MODEL_FORMAT = "biolstm-body-model/1"

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)
SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

# anthropometric stick figure, meters, pelvis at standing height
_TEMPLATE_JOINTS = np.array([
    [0.000, 0.000, 0.940],   # pelvis
    [0.085, 0.000, 0.860],   # left hip
    [-0.085, 0.000, 0.860],
    [0.000, 0.000, 1.050],   # spine1
    [0.095, 0.000, 0.480],   # left knee
    [-0.095, 0.000, 0.480],
    [0.000, -0.010, 1.180],  # spine2
    [0.100, -0.010, 0.080],  # left ankle
    [-0.100, -0.010, 0.080],
    [0.000, -0.010, 1.240],  # spine3
    [0.105, 0.120, 0.020],   # left foot
    [-0.105, 0.120, 0.020],
    [0.000, -0.010, 1.460],  # neck
    [0.075, -0.010, 1.400],  # left collar
    [-0.075, -0.010, 1.400],
    [0.000, 0.020, 1.560],   # head
    [0.180, -0.010, 1.420],  # left shoulder
    [-0.180, -0.010, 1.420],
    [0.450, -0.010, 1.420],  # left elbow
    [-0.450, -0.010, 1.420],
    [0.700, -0.010, 1.420],  # left wrist
    [-0.700, -0.010, 1.420],
    [0.790, -0.010, 1.420],  # left hand
    [-0.790, -0.010, 1.420],
])

# sole reference points (rest coordinates), rigidly attached to the ankles
_TEMPLATE_HEEL = np.array([[0.100, -0.065, 0.0], [-0.100, -0.065, 0.0]])
_TEMPLATE_TOE = np.array([[0.100, 0.175, 0.0], [-0.100, 0.175, 0.0]])

# radius of the proxy-mesh tube around each bone, keyed by child joint
_TUBE_RADIUS = {
    1: 0.09, 2: 0.09, 3: 0.12, 4: 0.07, 5: 0.07, 6: 0.13, 7: 0.05, 8: 0.05,
    9: 0.13, 10: 0.04, 11: 0.04, 12: 0.06, 13: 0.05, 14: 0.05, 15: 0.09,
    16: 0.05, 17: 0.05, 18: 0.045, 19: 0.045, 20: 0.035, 21: 0.035,
    22: 0.04, 23: 0.04,
}


@dataclass(frozen=True)
class JointIds:
    hip: tuple[int, int] = (1, 2)
    knee: tuple[int, int] = (4, 5)
    shoulder: tuple[int, int] = (16, 17)
    elbow: tuple[int, int] = (18, 19)
    ankle: tuple[int, int] = (7, 8)
    toe: tuple[int, int] = (10, 11)


@dataclass(frozen=True)
class Mesh:
    rest_vertices: np.ndarray          # (V, 3)
    skin_weights: np.ndarray           # (V, 24), rows sum to 1
    joint_regressor: np.ndarray        # (24, V)
    faces: np.ndarray | None = None    # (F, 3) int
    shape_dirs: np.ndarray | None = None  # (V, 3, 10)
    mesh_id: str = "proxy"

    @property
    def num_vertices(self) -> int:
        return self.rest_vertices.shape[0]


@dataclass(frozen=True)
class BodyModel:
    rest_joints: np.ndarray
    parents: tuple[int, ...]
    heel_points: np.ndarray            # (2, 3) rest coordinates, left/right
    toe_points: np.ndarray             # (2, 3)
    foot_length: tuple[float, float]
    foot_width: tuple[float, float]
    joint_names: tuple[str, ...] = JOINT_NAMES
    joint_ids: JointIds = field(default_factory=JointIds)
    lateral_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    mesh: Mesh | None = None

    def __post_init__(self):
        validate_model(self)

    @property
    def bone_offsets(self) -> np.ndarray:
        """Rest offset of each joint from its parent (root: its own position)."""
        off = self.rest_joints.copy()
        for j in range(1, NUM_JOINTS):
            off[j] = self.rest_joints[j] - self.rest_joints[self.parents[j]]
        return off

    def shaped(self, shape: np.ndarray | None) -> BodyModel:
        """Apply shape coefficients when the mesh carries blend directions.

        Without shape directions the coefficients are inert.
        """
        if shape is None or self.mesh is None or self.mesh.shape_dirs is None:
            return self
        beta = np.asarray(shape, dtype=float)
        if not np.any(beta):
            return self
        verts = self.mesh.rest_vertices + self.mesh.shape_dirs @ beta
        joints = self.mesh.joint_regressor @ verts
        delta = joints - self.rest_joints
        ank = self.joint_ids.ankle
        mesh = Mesh(verts, self.mesh.skin_weights, self.mesh.joint_regressor,
                    self.mesh.faces, self.mesh.shape_dirs, self.mesh.mesh_id)
        return BodyModel(
            rest_joints=joints,
            parents=self.parents,
            heel_points=self.heel_points + delta[list(ank)],
            toe_points=self.toe_points + delta[list(ank)],
            foot_length=self.foot_length,
            foot_width=self.foot_width,
            joint_names=self.joint_names,
            joint_ids=self.joint_ids,
            lateral_axis=self.lateral_axis,
            mesh=mesh,
        )


def validate_model(model: BodyModel) -> None:
    joints = np.asarray(model.rest_joints)
    if joints.shape != (NUM_JOINTS, 3) or not np.all(np.isfinite(joints)):
        raise ConfigInvalid(f"rest_joints must be a finite {NUM_JOINTS}x3 array")
    if len(model.parents) != NUM_JOINTS or model.parents[0] >= 0:
        raise ConfigInvalid("parents must have 24 entries with a negative root sentinel")
    for j in range(1, NUM_JOINTS):
        if not 0 <= model.parents[j] < j:
            raise ConfigInvalid(f"joint {j} has parent {model.parents[j]}; parents must precede children")
    for side in (0, 1):
        if not (model.foot_length[side] > 0 and model.foot_width[side] > 0):
            raise ConfigInvalid("foot length and width must be positive")
    if model.mesh is not None:
        w = model.mesh.skin_weights
        v = model.mesh.rest_vertices
        if w.shape != (v.shape[0], NUM_JOINTS):
            raise ConfigInvalid("skin_weights must be V x 24")
        if np.any(w < 0) or np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-6:
            raise ConfigInvalid("skin weight rows must be non-negative and sum to 1")
        if model.mesh.joint_regressor.shape != (NUM_JOINTS, v.shape[0]):
            raise ConfigInvalid("joint_regressor must be 24 x V")


def _orthonormal_frame(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def build_proxy_mesh(rest_joints: np.ndarray, parents, ring: int = 8,
                     stations=(0.15, 0.5, 0.85)) -> Mesh:
    """Tube mesh around every bone.

    Each bone contributes ``len(stations)`` rings of ``ring`` vertices.  A
    vertex is driven by the bone's parent joint, blended toward the child joint
    past the bone midpoint, so at most two weights per row are nonzero.
    """
    verts, weights, faces = [], [], []
    for child in range(1, NUM_JOINTS):
        parent = parents[child]
        a, b = rest_joints[parent], rest_joints[child]
        d = b - a
        length = np.linalg.norm(d)
        d = d / length
        u, v = _orthonormal_frame(d)
        radius = _TUBE_RADIUS.get(child, 0.05)
        first = len(verts)
        for s in stations:
            center = a + s * length * d
            w_child = max(0.0, s - 0.5)
            for k in range(ring):
                phi = 2.0 * np.pi * k / ring
                verts.append(center + radius * (np.cos(phi) * u + np.sin(phi) * v))
                row = np.zeros(NUM_JOINTS)
                row[parent] = 1.0 - w_child
                row[child] += w_child
                weights.append(row)
        for si in range(len(stations) - 1):
            for k in range(ring):
                p0 = first + si * ring + k
                p1 = first + si * ring + (k + 1) % ring
                q0, q1 = p0 + ring, p1 + ring
                faces.append((p0, p1, q1))
                faces.append((p0, q1, q0))
    verts = np.asarray(verts)
    weights = np.asarray(weights)
    # regressor: each joint is the mean of the ring-sized set of nearest vertices
    regressor = np.zeros((NUM_JOINTS, len(verts)))
    dist = np.linalg.norm(verts[None, :, :] - rest_joints[:, None, :], axis=-1)
    for j in range(NUM_JOINTS):
        near = np.argsort(dist[j])[:ring]
        regressor[j, near] = 1.0 / ring
    return Mesh(verts, weights, regressor, np.asarray(faces, dtype=int), None, "proxy")


def default_model(with_mesh: bool = True) -> BodyModel:
    """Built-in stick-figure template with the SMPL joint ordering."""
    joints = _TEMPLATE_JOINTS.copy()
    length = tuple(float(np.linalg.norm(_TEMPLATE_TOE[s] - _TEMPLATE_HEEL[s])) for s in (0, 1))
    width = tuple(0.4 * L for L in length)
    mesh = build_proxy_mesh(joints, SMPL_PARENTS) if with_mesh else None
    return BodyModel(
        rest_joints=joints,
        parents=SMPL_PARENTS,
        heel_points=_TEMPLATE_HEEL.copy(),
        toe_points=_TEMPLATE_TOE.copy(),
        foot_length=length,
        foot_width=width,
        mesh=mesh,
    )


def _array(doc: dict, key: str, shape=None) -> np.ndarray | None:
    if key not in doc or doc[key] is None:
        return None
    arr = np.asarray(doc[key], dtype=float)
    if shape is not None and arr.shape != shape:
        raise ConfigInvalid(f"{key}: expected shape {shape}, got {arr.shape}")
    return arr


def model_to_dict(model: BodyModel) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "joint_names": list(model.joint_names),
        "parents": list(model.parents),
        "rest_joints": model.rest_joints.tolist(),
        "lateral_axis": model.lateral_axis.tolist(),
        "heel_points": model.heel_points.tolist(),
        "toe_points": model.toe_points.tolist(),
        "foot": {"length": list(model.foot_length), "width": list(model.foot_width)},
        "joint_ids": {k: list(v) for k, v in vars(model.joint_ids).items()},
    }
    if model.mesh is not None:
        m = model.mesh
        doc["mesh"] = {
            "mesh_id": m.mesh_id,
            "rest_vertices": m.rest_vertices.tolist(),
            "skin_weights": m.skin_weights.tolist(),
            "joint_regressor": m.joint_regressor.tolist(),
            "faces": None if m.faces is None else m.faces.tolist(),
            "shape_dirs": None if m.shape_dirs is None else m.shape_dirs.tolist(),
        }
    return doc


def model_from_dict(doc: dict) -> BodyModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigInvalid(f"unsupported body model format {doc.get('format')!r}")
    joints = _array(doc, "rest_joints", (NUM_JOINTS, 3))
    if joints is None:
        raise ConfigInvalid("rest_joints missing")
    parents = tuple(int(p) for p in doc["parents"])
    ids = JointIds(**{k: tuple(v) for k, v in doc.get("joint_ids", {}).items()})
    mesh = None
    if doc.get("mesh"):
        m = doc["mesh"]
        verts = _array(m, "rest_vertices")
        mesh = Mesh(
            rest_vertices=verts,
            skin_weights=_array(m, "skin_weights"),
            joint_regressor=_array(m, "joint_regressor"),
            faces=None if m.get("faces") is None else np.asarray(m["faces"], dtype=int),
            shape_dirs=_array(m, "shape_dirs"),
            mesh_id=m.get("mesh_id", "custom"),
        )
    heel = _array(doc, "heel_points", (2, 3))
    toe = _array(doc, "toe_points", (2, 3))
    if mesh is not None and heel is None and "heel_vertex" in doc.get("mesh", {}):
        heel = mesh.rest_vertices[list(doc["mesh"]["heel_vertex"])]
        toe = mesh.rest_vertices[list(doc["mesh"]["toe_vertex"])]
    if heel is None or toe is None:
        raise ConfigInvalid("heel_points/toe_points (or mesh heel/toe vertices) required")
    foot = doc.get("foot", {})
    length = tuple(foot.get("length") or
                   [float(np.linalg.norm(toe[s] - heel[s])) for s in (0, 1)])
    width = tuple(foot.get("width") or [0.4 * L for L in length])
    return BodyModel(
        rest_joints=joints,
        parents=parents,
        heel_points=heel,
        toe_points=toe,
        foot_length=tuple(float(x) for x in length),
        foot_width=tuple(float(x) for x in width),
        joint_names=tuple(doc.get("joint_names", JOINT_NAMES)),
        joint_ids=ids,
        lateral_axis=np.asarray(doc.get("lateral_axis", [1.0, 0.0, 0.0]), dtype=float),
        mesh=mesh,
    )


def load_model(path: str | Path | None) -> BodyModel:
    if path is None:
        return default_model()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataIOError(f"cannot read body model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"body model {path} is not valid JSON: {exc}") from exc
    return model_from_dict(doc)


def save_model(model: BodyModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)
