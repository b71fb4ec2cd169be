"""Biomechanics-informed training objective.

total = L_c + lambda1 * L_s + lambda2 * L_g

* L_c  mean absolute error between true and predicted frame differences
* L_s  mirror-symmetry penalty on frontal-plane leg and arm angles
* L_g  foot-to-ground volume, summed over both feet

L_s and L_g are evaluated on the absolute next-frame state rebuilt from the
previous frame plus the predicted difference.  Batch reduction is the mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body_model import BodyModel, angles_batch, angles_vjp, clearance_batch, clearance_vjp, fk_batch, fk_vjp
from .errors import ConfigInvalid, DimensionMismatch


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 0.01

    def __post_init__(self):
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ConfigInvalid("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    L_c: float
    L_s: float
    L_g: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"L_c": self.L_c, "L_s": self.L_s, "L_g": self.L_g, "total": self.total}


def periodicity_loss(d_true, d_pred) -> float:
    d_true = np.asarray(d_true, dtype=float)
    d_pred = np.asarray(d_pred, dtype=float)
    if d_true.shape != d_pred.shape:
        raise DimensionMismatch(f"difference shapes differ: {d_true.shape} vs {d_pred.shape}")
    return float(np.mean(np.abs(d_true - d_pred)))


def symmetry_loss(angles) -> float:
    """Accepts a mapping with leg1/leg2/sho1/sho2 or a length-4 sequence."""
    if isinstance(angles, dict):
        angles = [angles["leg1"], angles["leg2"], angles["sho1"], angles["sho2"]]
    a = np.asarray(angles, dtype=float)
    return float(abs(a[0] + a[1]) + abs(a[2] + a[3]))


def ground_volume_loss(D, alpha, L, w):
    """Volume under one foot: a rectangular block plus a triangular prism.

    ``alpha`` is the inclination of the sole with the heel raised above the
    toe, so the toe sits at height ``D - L sin(alpha)``.
    """
    return w * D * (L * np.cos(alpha)) - 0.5 * w * (L * np.sin(alpha)) * (L * np.cos(alpha))


def _robust_terms(D, pitch, L, w):
    """Robust per-foot volume and its partials in (D, pitch).

    ``pitch`` follows the clearance convention (toe above heel positive).
    Inside the domain (heel and toe at or above ground) this is exactly
    ``ground_volume_loss(D, -pitch, L, w)``; outside it the prism is rebuilt
    from absolute heel and toe clearances so penetration costs volume.
    """
    D = np.asarray(D, dtype=float)
    pitch = np.asarray(pitch, dtype=float)
    s, c = np.sin(pitch), np.cos(pitch)
    toe = D + L * s
    inside = (D >= 0) & (toe >= 0)
    exact = ground_volume_loss(D, -pitch, L, w)
    heel_abs, toe_abs = np.abs(D), np.abs(toe)
    outside = 0.5 * w * L * c * (heel_abs + toe_abs)
    value = np.where(inside, exact, outside)
    # partials; in-domain: w L c D + 0.5 w L^2 s c
    dD_in = w * L * c
    dp_in = -w * L * s * D + 0.5 * w * L * L * (c * c - s * s)
    sh, st = np.sign(D), np.sign(toe)
    dD_out = 0.5 * w * L * c * (sh + st)
    dp_out = -0.5 * w * L * s * (heel_abs + toe_abs) + 0.5 * w * L * c * st * L * c
    return value, np.where(inside, dD_in, dD_out), np.where(inside, dp_in, dp_out)


def robust_ground_loss(D, pitch, L, w):
    return _robust_terms(D, pitch, L, w)[0]


def bio_terms(trans, pose, ground_z, model: BodyModel, need_grad: bool = True):
    """Per-sample L_s and L_g of absolute states, with gradients.

    Returns (L_s (N,), L_g (N,), grads) where grads maps 'trans'/'pose' to
    (dL_s, dL_g) arrays, or None when need_grad is False.
    """
    joints, glob, cache = fk_batch(trans, pose, model)
    ang = angles_batch(joints, glob, model)
    leg = ang[:, 0] + ang[:, 1]
    sho = ang[:, 2] + ang[:, 3]
    L_s = np.abs(leg) + np.abs(sho)
    D, pitch = clearance_batch(joints, glob, model, ground_z)
    L = np.asarray(model.foot_length)[None, :]
    w = np.asarray(model.foot_width)[None, :]
    vol, gD, gp = _robust_terms(D, pitch, L, w)
    L_g = vol.sum(axis=1)
    if not need_grad:
        return L_s, L_g, None
    g_ang = np.stack([np.sign(leg), np.sign(leg), np.sign(sho), np.sign(sho)], axis=1)
    dj_s, dg_s = angles_vjp(g_ang, joints, glob, model)
    ds_trans, ds_pose = fk_vjp(dj_s, dg_s, cache, model)
    dj_g, dg_g = clearance_vjp(gD, gp, joints, glob, model)
    dg_trans, dg_pose = fk_vjp(dj_g, dg_g, cache, model)
    grads = {"trans": (ds_trans, dg_trans), "pose": (ds_pose, dg_pose)}
    return L_s, L_g, grads


def combine(L_c: float, L_s: float, L_g: float, weights: LossWeights) -> LossBreakdown:
    return LossBreakdown(L_c, L_s, L_g, L_c + weights.lambda1 * L_s + weights.lambda2 * L_g)


def total_loss(pred, target, part: str, prev_state, next_state, ground_z,
               model: BodyModel, weights: LossWeights, scale, need_grad: bool = True):
    """Objective of one network's batch output.

    pred, target: (N, q) normalized differences; ``part`` is 'trans' (q=3)
    or 'pose' (q=72).  ``scale`` converts normalized differences to physical
    units.  ``prev_state``/``next_state`` are (N, 75) physical trans+pose; the
    part not produced by this network is taken from ``next_state``.

    Returns (LossBreakdown, dtotal/dpred).
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs target {target.shape}")
    n, q = pred.shape
    sl = slice(0, 3) if part == "trans" else slice(3, 75)
    if q != sl.stop - sl.start:
        raise DimensionMismatch(f"{part} network must output {sl.stop - sl.start} values, got {q}")
    diff = target - pred
    L_c = float(np.mean(np.abs(diff)))
    grad = -np.sign(diff) / (n * q)

    use_bio = weights.lambda1 > 0 or weights.lambda2 > 0
    L_s = L_g = 0.0
    if use_bio or not need_grad:
        state = np.array(next_state, dtype=float, copy=True)
        state[:, sl] = np.asarray(prev_state)[:, sl] + pred * scale
        ls, lg, g = bio_terms(state[:, :3], state[:, 3:], ground_z, model, need_grad and use_bio)
        L_s, L_g = float(ls.mean()), float(lg.mean())
        if g is not None:
            ds, dg = g[part]
            grad = grad + (weights.lambda1 * ds + weights.lambda2 * dg) * scale / n
    return combine(L_c, L_s, L_g, weights), grad
