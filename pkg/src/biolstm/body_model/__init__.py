"""Articulated-body mathematics on the SMPL 24-joint tree."""

from .kinematics import (
    BodyState,
    PosedBody,
    angles_batch,
    angles_vjp,
    clearance_batch,
    clearance_vjp,
    fk_batch,
    fk_vjp,
    foot_clearance,
    forward_kinematics,
    leg_shoulder_angles,
    skin,
)
from .model import (
    JOINT_NAMES,
    NUM_JOINTS,
    NUM_POSE,
    NUM_SHAPE,
    SMPL_PARENTS,
    BodyModel,
    JointIds,
    Mesh,
    default_model,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)
from .rotations import (
    canonical_components,
    geodesic_angle,
    log_map,
    rodrigues,
    rodrigues_vjp,
    rotation_angle,
)
from .export import write_obj, read_obj_vertices
