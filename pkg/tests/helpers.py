"""Shared helpers for the test modules."""

import numpy as np

LR_PAIRS = {1: 2, 4: 5, 7: 8, 10: 11, 13: 14, 16: 17, 18: 19, 20: 21, 22: 23}
SWAP = {**LR_PAIRS, **{v: k for k, v in LR_PAIRS.items()}}


def mirror_pose(pose):
    """Reflect through the body's sagittal plane (x -> -x).

    Left and right joints trade places; a reflected axis-angle keeps its x
    component and negates y and z.
    """
    aa = np.asarray(pose, dtype=float).reshape(-1, 24, 3)
    out = np.empty_like(aa)
    for j in range(24):
        src = aa[:, SWAP.get(j, j)]
        out[:, j] = np.stack([src[:, 0], -src[:, 1], -src[:, 2]], axis=-1)
    return out.reshape(np.shape(pose))


def symmetric_pose(rng, scale=0.4):
    """A random pose that is its own mirror image."""
    pose = rng.normal(scale=scale, size=(24, 3))
    for j in range(24):
        if j not in SWAP:
            pose[j, 1:] = 0.0
    for left, right in LR_PAIRS.items():
        pose[right] = [pose[left, 0], -pose[left, 1], -pose[left, 2]]
    return pose.ravel()


def naive_lstm(params, x):
    """Step-by-step recurrence for one sample, one unit at a time.

    Written against the textbook gate equations with explicit per-gate
    slices and scalar math, independent of the vectorized implementation.
    """
    import math

    n_layers = sum(1 for k in params if k.startswith("W") and k != "Wd")
    seq = [list(map(float, row)) for row in np.asarray(x)]
    for k in range(n_layers):
        W, b = params[f"W{k}"], params[f"b{k}"]
        H = W.shape[0] // 4
        h, c = [0.0] * H, [0.0] * H
        out = []
        for xt in seq:
            z = xt + h
            new_h, new_c = [], []
            for u in range(H):
                def act(block):
                    row = W[block * H + u]
                    return sum(float(wv) * zv for wv, zv in zip(row, z)) + float(b[block * H + u])
                i = 1.0 / (1.0 + math.exp(-act(0)))
                f = 1.0 / (1.0 + math.exp(-act(1)))
                g = math.tanh(act(2))
                o = 1.0 / (1.0 + math.exp(-act(3)))
                cu = f * c[u] + i * g
                new_c.append(cu)
                new_h.append(o * math.tanh(cu))
            h, c = new_h, new_c
            out.append(h)
        seq = out
    h = seq[-1]
    return np.array([sum(float(w) * hv for w, hv in zip(row, h)) + float(bd)
                     for row, bd in zip(params["Wd"], params["bd"])])


def random_params(rng, q, units, layers=2, q_out=None, scale=0.5):
    q_out = q if q_out is None else q_out
    params, n_in = {}, q
    for k in range(layers):
        params[f"W{k}"] = rng.normal(scale=scale, size=(4 * units, n_in + units))
        params[f"b{k}"] = rng.normal(scale=scale, size=4 * units)
        n_in = units
    params["Wd"] = rng.normal(scale=scale, size=(q_out, units))
    params["bd"] = rng.normal(scale=scale, size=q_out)
    return params
