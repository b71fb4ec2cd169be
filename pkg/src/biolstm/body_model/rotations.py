"""Axis-angle rotations with exact derivatives.

All functions broadcast over leading batch dimensions: an axis-angle array of
shape ``(..., 3)`` maps to rotation matrices of shape ``(..., 3, 3)``.
"""

import numpy as np

TWO_PI = 2.0 * np.pi

# below this angle the trigonometric coefficients switch to their Taylor series
_SMALL = 1e-2

# generators of so(3): _GEN[i] = skew(e_i)
_GEN = np.zeros((3, 3, 3))
_GEN[0, 2, 1], _GEN[0, 1, 2] = 1.0, -1.0
_GEN[1, 0, 2], _GEN[1, 2, 0] = 1.0, -1.0
_GEN[2, 1, 0], _GEN[2, 0, 1] = 1.0, -1.0


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _coefficients(theta: np.ndarray):
    """a = sin t / t, b = (1 - cos t) / t^2 and their scaled derivatives
    c = a'(t) / t, e = b'(t) / t, all smooth through t = 0."""
    t2 = theta * theta
    small = theta < _SMALL
    safe = np.where(small, 1.0, theta)
    s, co = np.sin(safe), np.cos(safe)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, s / safe)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - co) / safe**2)
    c = np.where(small, -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0, (safe * co - s) / safe**3)
    e = np.where(
        small,
        -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        (safe * s - 2.0 * (1.0 - co)) / safe**4,
    )
    return a, b, c, e


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Rotation matrix of an axis-angle vector (zero maps to identity)."""
    r = np.asarray(axis_angle, dtype=float)
    theta = np.linalg.norm(r, axis=-1)
    a, b, _, _ = _coefficients(theta)
    k = skew(r)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rodrigues_vjp(axis_angle: np.ndarray, grad_R: np.ndarray) -> np.ndarray:
    """Pull a gradient on R back to the axis-angle vector.

    Uses dR/dr_i = a E_i + b (E_i K + K E_i) + c r_i K + e r_i K^2.
    """
    r = np.asarray(axis_angle, dtype=float)
    theta = np.linalg.norm(r, axis=-1)
    a, b, c, e = _coefficients(theta)
    k = skew(r)
    k2 = k @ k
    # <G, E_i>, <G, E_i K + K E_i>
    g_e = np.einsum("...jk,ijk->...i", grad_R, _GEN)
    ek = np.einsum("ijk,...kl->...ijl", _GEN, k)
    ke = np.einsum("...jk,ikl->...ijl", k, _GEN)
    g_sym = np.einsum("...jk,...ijk->...i", grad_R, ek + ke)
    g_k = np.sum(grad_R * k, axis=(-2, -1))
    g_k2 = np.sum(grad_R * k2, axis=(-2, -1))
    return (
        a[..., None] * g_e
        + b[..., None] * g_sym
        + (c * g_k + e * g_k2)[..., None] * r
    )


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Angle in [0, pi] of a rotation matrix via the trace formula."""
    tr = np.trace(R, axis1=-2, axis2=-1)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def geodesic_angle(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Angle of the relative rotation R1^T R2."""
    rel = np.swapaxes(R1, -1, -2) @ R2
    return rotation_angle(rel)


def log_map(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector (norm in [0, pi]) of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    theta = rotation_angle(R)
    w = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    s = np.sin(theta)
    out = np.zeros(R.shape[:-2] + (3,))
    regular = s > 1e-6
    scale = np.where(regular, theta / np.where(regular, 2.0 * s, 1.0), 0.5)
    out = w * scale[..., None]
    # near pi the antisymmetric part vanishes; recover the axis from R + I
    near_pi = (~regular) & (theta > np.pi / 2)
    if np.any(near_pi):
        sym = (R[near_pi] + np.eye(3)) / 2.0
        diag = np.clip(np.diagonal(sym, axis1=-2, axis2=-1), 0.0, None)
        axis = np.sqrt(diag)
        # fix relative signs using the largest component
        idx = np.argmax(axis, axis=-1)
        for n in range(axis.shape[0]):
            i = idx[n]
            for j in range(3):
                if j != i and sym[n, i, j] < 0:
                    axis[n, j] = -axis[n, j]
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        out[near_pi] = axis * theta[near_pi][..., None]
    return out


def canonical_components(pose: np.ndarray) -> np.ndarray:
    """Map each component into (-pi, pi].

    Pose vectors are stored component-wise modulo 2*pi; this returns the
    representative used for geometry.
    """
    x = np.asarray(pose, dtype=float)
    out = np.pi - np.mod(np.pi - x, TWO_PI)
    return np.where(out <= -np.pi, out + TWO_PI, out)
