"""Pose-prediction metrics, next-frame tables, rollout curves and reports.

All metrics are computed in the global frame without root alignment.
Per-item values are kept so every aggregate can be recomputed from them.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body_model import BodyModel, PosedBody, clearance_batch, fk_batch, skin
from .data import STATE_DIM, PoseSequence, window
from .errors import DataIOError, DimensionMismatch, MeshMismatch, NonRotationInput, TooFewSequences
from .predictor import Predictor, history_joints

METRICS = ("trans_rmse", "mpjpe", "vertex_rmse", "mpjae", "ground_distance")
ORTHO_TOL = 1e-6


def _points(x) -> np.ndarray:
    return np.asarray(x.joints if isinstance(x, PosedBody) else x, dtype=float)


def mpjpe(pred, truth) -> float:
    """Mean Euclidean joint distance; accepts PosedBody or (..., J, 3) arrays."""
    a, b = _points(pred), _points(truth)
    if a.shape != b.shape or a.shape[-1] != 3:
        raise DimensionMismatch(f"joint arrays differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


def vertex_rmse(pred, truth) -> float:
    a = np.asarray(pred.vertices if isinstance(pred, PosedBody) else pred, dtype=float)
    b = np.asarray(truth.vertices if isinstance(truth, PosedBody) else truth, dtype=float)
    if a.shape != b.shape:
        raise MeshMismatch(f"vertex arrays differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))


def check_rotations(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    eye = np.eye(3)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max(axis=(-2, -1))
    if np.any(err > tol) or np.any(np.linalg.det(R) <= 0):
        raise NonRotationInput("matrix is not a proper rotation")


def relative_angle(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Geodesic angle (rad) between rotation stacks, accurate near 0 and pi."""
    rel = np.swapaxes(R1, -1, -2) @ R2
    c = (np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0
    w = np.stack([rel[..., 2, 1] - rel[..., 1, 2], rel[..., 0, 2] - rel[..., 2, 0],
                  rel[..., 1, 0] - rel[..., 0, 1]], axis=-1)
    s = np.linalg.norm(w, axis=-1) / 2.0
    return np.arctan2(s, c)


def mpjae(pred, truth) -> float:
    """Mean geodesic angle in degrees over corresponding rotations."""
    a = np.asarray(pred.joint_rotations if isinstance(pred, PosedBody) else pred, dtype=float)
    b = np.asarray(truth.joint_rotations if isinstance(truth, PosedBody) else truth, dtype=float)
    if a.shape != b.shape or a.shape[-2:] != (3, 3):
        raise DimensionMismatch(f"rotation arrays differ: {a.shape} vs {b.shape}")
    check_rotations(a)
    check_rotations(b)
    return float(np.degrees(np.mean(relative_angle(a, b))))


def trans_errors(pred, truth) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(pred) - np.atleast_2d(truth), axis=-1)


def trans_rmse(pred, truth) -> float:
    """Root of the mean squared translation error over items."""
    return float(np.sqrt(np.mean(trans_errors(pred, truth) ** 2)))


def trans_median(pred, truth) -> float:
    return float(np.median(trans_errors(pred, truth)))


def ground_distance(posed, model: BodyModel, ground_z) -> float:
    """Unsigned heel clearance of the lower foot; batch mean for stacks."""
    if isinstance(posed, PosedBody):
        joints, rots = posed.joints[None], posed.joint_rotations[None]
    else:
        joints, rots = posed
    D, _ = clearance_batch(joints, rots, model, np.broadcast_to(ground_z, (joints.shape[0],)))
    return float(np.mean(np.min(np.abs(D), axis=1)))


# --- per-item evaluation -----------------------------------------------------------------

@dataclass
class Posed:
    joints: np.ndarray
    rots: np.ndarray | None = None
    verts: np.ndarray | None = None


def pose_states(states: np.ndarray, model: BodyModel, shapes: np.ndarray | None = None,
                with_mesh: bool = True) -> Posed:
    """Posed bodies for (N, 75) states; shape blend applied when the mesh supports it."""
    has_blend = model.mesh is not None and model.mesh.shape_dirs is not None and shapes is not None
    if not has_blend:
        j, g, _ = fk_batch(states[:, :3], states[:, 3:STATE_DIM], model)
        v = skin(j, g, model) if with_mesh and model.mesh is not None else None
        return Posed(j, g, v)
    parts = [pose_states(states[i:i + 1], model.shaped(shapes[i]), None, with_mesh) for i in range(len(states))]
    cat = lambda name: None if getattr(parts[0], name) is None else np.concatenate([getattr(p, name) for p in parts])
    return Posed(cat("joints"), cat("rots"), cat("verts"))


def item_metrics(pred, truth_states: np.ndarray, ground_z: np.ndarray, model: BodyModel,
                 shapes: np.ndarray | None = None, joints_only: bool = False) -> dict[str, np.ndarray]:
    """Per-item errors; metrics undefined for a method are NaN."""
    truth = pose_states(truth_states, model, shapes)
    n = truth_states.shape[0]
    nan = np.full(n, np.nan)
    if joints_only:
        pj = np.asarray(pred, dtype=float).reshape(n, -1, 3)
        return {"trans_rmse": nan, "mpjpe": np.linalg.norm(pj - truth.joints, axis=-1).mean(axis=1),
                "vertex_rmse": nan, "mpjae": nan, "ground_distance": nan}
    p = pose_states(pred, model, shapes)
    out = {
        "trans_rmse": trans_errors(pred[:, :3], truth_states[:, :3]),
        "mpjpe": np.linalg.norm(p.joints - truth.joints, axis=-1).mean(axis=1),
        "vertex_rmse": (np.sqrt(np.mean(np.sum((p.verts - truth.verts) ** 2, axis=-1), axis=1))
                        if p.verts is not None else nan),
        "mpjae": np.degrees(relative_angle(p.rots, truth.rots).mean(axis=1)),
    }
    D, _ = clearance_batch(p.joints, p.rots, model, ground_z)
    out["ground_distance"] = np.min(np.abs(D), axis=1)
    return out


def reduce_metric(name: str, values: np.ndarray) -> float:
    """Batch aggregate: RMSE-type metrics pool squares, others average."""
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.all(np.isnan(v)):
        return math.nan
    if name in ("trans_rmse", "vertex_rmse"):
        return float(np.sqrt(np.mean(v ** 2)))
    return float(np.mean(v))


def _truth_lookup(observed: list[PoseSequence], truth: list[PoseSequence] | None):
    if truth is None:
        return observed
    by_key = {s.key: s for s in truth}
    missing = [s.key for s in observed if s.key not in by_key]
    if missing:
        raise DimensionMismatch(f"no ground truth for sequences {missing[:3]}")
    return [by_key[s.key] for s in observed]


def predictor_input(predictor: Predictor, history: np.ndarray, model: BodyModel) -> np.ndarray:
    return history_joints(history, model) if predictor.emits_joints else history


def next_frame_items(predictor: Predictor, observed, truth, model: BodyModel, lookback: int):
    """Next-frame predictions on every window; returns (metrics dict, windows)."""
    truth = _truth_lookup(observed, truth)
    w, tw = window(observed, lookback), window(truth, lookback)
    if len(w) == 0:
        raise TooFewSequences(f"no sequence is longer than the look-back window {lookback}")
    pred = predictor.predict_next(predictor_input(predictor, w.history, model))
    items = item_metrics(pred, tw.next, w.ground_z, model, w.shape, predictor.emits_joints)
    return items, w


# --- reports -------------------------------------------------------------------------

@dataclass
class MetricReport:
    rows: list = field(default_factory=list)      # method, group, horizon, metric, mean, std, n
    curves: list = field(default_factory=list)    # method, index, seconds, trans_median, trans_rmse, n
    meta: dict = field(default_factory=dict)

    def value(self, method: str, metric: str, group: str = "all", horizon: int = 1) -> float:
        for r in self.rows:
            if (r["method"], r["group"], r["horizon"], r["metric"]) == (method, group, horizon, metric):
                return r["mean"]
        raise KeyError((method, group, horizon, metric))

    def curve(self, method: str, key: str = "trans_median") -> np.ndarray:
        return np.array([r[key] for r in self.curves if r["method"] == method])

    def to_dict(self) -> dict:
        clean = lambda v: None if isinstance(v, float) and math.isnan(v) else v
        return {
            "rows": [{k: clean(v) for k, v in r.items()} for r in self.rows],
            "curves": [{k: clean(v) for k, v in r.items()} for r in self.curves],
            "meta": self.meta,
        }

    def write(self, out_dir: str | Path, prefix: str = "") -> dict[str, Path]:
        """Write table, per-action, horizon-curve CSVs and a JSON summary."""
        out_dir = Path(out_dir)
        paths = {
            "table": out_dir / f"{prefix}next_frame.csv",
            "actions": out_dir / f"{prefix}per_action.csv",
            "curves": out_dir / f"{prefix}horizon_curves.csv",
            "summary": out_dir / f"{prefix}summary.json",
        }
        fmt = lambda v: "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(v)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            header = ["method", "group", "horizon", "metric", "mean", "std", "n"]
            for key, keep in (("table", lambda r: r["group"] == "all"), ("actions", lambda r: r["group"] != "all")):
                with open(paths[key], "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(header)
                    for r in self.rows:
                        if keep(r):
                            w.writerow([fmt(r[h]) if h in ("mean", "std") else r[h] for h in header])
            with open(paths["curves"], "w", newline="") as fh:
                w = csv.writer(fh)
                cols = ["method", "index", "seconds", "trans_median", "trans_rmse", "n"]
                w.writerow(cols)
                for r in self.curves:
                    w.writerow([fmt(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
            paths["summary"].write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        except OSError as exc:
            raise DataIOError(f"cannot write reports to {out_dir}: {exc}") from exc
        return paths


def _sequence_means(items: dict, seq_index: np.ndarray, name: str) -> np.ndarray:
    return np.array([reduce_metric(name, items[name][seq_index == k]) for k in np.unique(seq_index)])


def table_rows(method: str, items: dict, w, horizon: int = 1, by_action: bool = True) -> list[dict]:
    """'all' rows pool every window; action rows average per-sequence means."""
    rows = []
    for name in METRICS:
        seq_means = _sequence_means(items, w.seq_index, name)
        rows.append({"method": method, "group": "all", "horizon": horizon, "metric": name,
                     "mean": reduce_metric(name, items[name]),
                     "std": float(np.nanstd(seq_means)) if not np.all(np.isnan(seq_means)) else math.nan,
                     "n": int(len(items[name]))})
    if by_action:
        actions = np.array([a or "other" for a in w.actions])
        for act in sorted(set(actions)):
            mask = actions == act
            sub = {k: v[mask] for k, v in items.items()}
            for name in METRICS:
                sm = _sequence_means(sub, w.seq_index[mask], name)
                ok = not np.all(np.isnan(sm))
                rows.append({"method": method, "group": act, "horizon": horizon, "metric": name,
                             "mean": float(np.nanmean(sm)) if ok else math.nan,
                             "std": float(np.nanstd(sm)) if ok else math.nan,
                             "n": int(mask.sum())})
    return rows


def mtp_curve(predictor: Predictor, observed, truth, model: BodyModel, lookback: int = 5,
              horizon: int = 31, fps: float = 6.0, method: str = "") -> list[dict]:
    """Translation error along a rollout from the first ``lookback`` frames.

    Points 0..lookback-1 are the given frames (error exactly zero); the next
    ``horizon`` points are rollout steps.  Skeleton predictors use the root
    joint displacement as their translation.
    """
    truth = _truth_lookup(observed, truth)
    need = lookback + horizon
    pairs = [(o, t) for o, t in zip(observed, truth) if len(o) >= need]
    if not pairs:
        raise TooFewSequences(f"no sequence has the {need} frames a {horizon}-step rollout needs")
    hist = np.stack([o.states[:lookback] for o, _ in pairs])
    future = np.stack([t.states[lookback:need] for _, t in pairs])
    out = predictor.rollout(predictor_input(predictor, hist, model), horizon)
    if predictor.emits_joints:
        root = model.bone_offsets[0]
        pred_trans = out[..., :3] - root
    else:
        pred_trans = out[..., :3]
    err = np.linalg.norm(pred_trans - future[..., :3], axis=-1)      # (S, horizon)
    rows = []
    for i in range(need):
        e = np.zeros(len(pairs)) if i < lookback else err[:, i - lookback]
        rows.append({"method": method, "index": i, "seconds": i / fps,
                     "trans_median": float(np.median(e)), "trans_rmse": float(np.sqrt(np.mean(e ** 2))),
                     "n": len(pairs)})
    return rows


def evaluate(methods: dict[str, Predictor], observed, truth, model: BodyModel, lookback: int = 5,
             horizons=(1,), by_action: bool = True, rollout_horizon: int | None = 31,
             fps: float = 6.0) -> MetricReport:
    """Next-frame tables for every method plus rollout curves when sequences allow."""
    report = MetricReport(meta={"lookback": lookback, "fps": fps,
                                "mesh_id": model.mesh.mesh_id if model.mesh is not None else None})
    for name, pred in methods.items():
        for h in horizons:
            if h == 1:
                items, w = next_frame_items(pred, observed, truth, model, lookback)
            else:
                items, w = horizon_items(pred, observed, truth, model, lookback, h)
            report.rows.extend(table_rows(name, items, w, h, by_action))
        if rollout_horizon:
            try:
                report.curves.extend(mtp_curve(pred, observed, truth, model, lookback,
                                               rollout_horizon, fps, name))
            except TooFewSequences:
                report.meta["rollout_skipped"] = True
    return report


def horizon_items(predictor: Predictor, observed, truth, model: BodyModel, lookback: int, h: int):
    """Errors of the h-th rollout step from every window with h frames to spare."""
    truth = _truth_lookup(observed, truth)
    w = window(observed, lookback + h - 1)
    tw = window(truth, lookback + h - 1)
    if len(w) == 0:
        raise TooFewSequences(f"no sequence covers look-back {lookback} plus horizon {h}")
    hist = w.states[:, :lookback]
    pred = predictor.rollout(predictor_input(predictor, hist, model), h)[:, -1]
    items = item_metrics(pred, tw.next, w.ground_z, model, w.shape, predictor.emits_joints)
    return items, w


def combine_runs(reports: list[MetricReport]) -> MetricReport:
    """Mean and standard deviation across runs (e.g. random initializations)."""
    if not reports:
        raise ValueError("no reports to combine")
    out = MetricReport(meta=dict(reports[0].meta, runs=len(reports)))
    for i, row in enumerate(reports[0].rows):
        vals = np.array([r.rows[i]["mean"] for r in reports], dtype=float)
        ok = not np.all(np.isnan(vals))
        out.rows.append(dict(row, mean=float(np.nanmean(vals)) if ok else math.nan,
                             std=float(np.nanstd(vals)) if ok else math.nan))
    for i, row in enumerate(reports[0].curves):
        out.curves.append(dict(row, **{k: float(np.mean([r.curves[i][k] for r in reports]))
                                       for k in ("trans_median", "trans_rmse")}))
    return out
