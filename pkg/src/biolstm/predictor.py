"""Next-frame prediction, multi-step rollout and the comparison baselines.

Array-level predictors take histories of shape (N, l, 75) holding
translation and pose; shape vectors are carried alongside and copied
forward unchanged.  Every predicted pose component is wrapped into
[0, 2*pi).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .body_model import BodyModel, BodyState, fk_batch
from .data import STATE_DIM, NormalizationStats, state_diffs, wrap_angle
from .errors import ChkptMismatch, DataIOError, HistoryTooShort, MissingStats
from .network import NetworkWeights, forward


def _as_batch(history) -> tuple[np.ndarray, bool]:
    h = np.asarray(history, dtype=float)
    if h.ndim == 2:
        return h[None], True
    return h, False


def _finish(state: np.ndarray) -> np.ndarray:
    out = np.array(state, dtype=float, copy=True)
    out[..., 3:] = wrap_angle(out[..., 3:])
    return out


class Predictor:
    """Common rollout driver; subclasses implement ``step``."""

    lookback: int = 2
    emits_joints = False

    def step(self, history: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, h: np.ndarray) -> None:
        if h.shape[1] < self.lookback:
            raise HistoryTooShort(f"need {self.lookback} frames of history, got {h.shape[1]}")

    def predict_next(self, history) -> np.ndarray:
        h, single = _as_batch(history)
        self._check(h)
        out = self.step(h[:, -self.lookback:])
        return out[0] if single else out

    def rollout(self, history, horizon: int) -> np.ndarray:
        """Feed predictions back for ``horizon`` steps; returns (N, k, dim)."""
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        h, single = _as_batch(history)
        self._check(h)
        window = h[:, -self.lookback:].copy()
        outs = []
        for _ in range(horizon):
            nxt = self.step(window)
            outs.append(nxt)
            window = np.concatenate([window[:, 1:], nxt[:, None]], axis=1)
        out = np.stack(outs, axis=1)
        return out[0] if single else out


class BioPredictor(Predictor):
    """Translation and pose networks fed with normalized frame differences."""

    def __init__(self, nets: dict[str, NetworkWeights], stats: NormalizationStats | None = None):
        if set(nets) != {"trans", "pose"}:
            raise ChkptMismatch(f"need translation and pose networks, got {sorted(nets)}")
        cfgs = [nets[k].config for k in ("trans", "pose")]
        if cfgs[0].lookback != cfgs[1].lookback:
            raise ChkptMismatch("translation and pose networks use different look-back windows")
        for k, q in (("trans", 3), ("pose", 72)):
            c = nets[k].config
            if c.mode != "diff" or c.input_dim != q or c.part != k:
                raise ChkptMismatch(f"{k} checkpoint is not a {q}-dim difference network")
        self.nets = nets
        self.lookback = cfgs[0].lookback
        if stats is None:
            if not nets["trans"].stats:
                raise MissingStats("checkpoint carries no normalization statistics")
            stats = NormalizationStats.from_dict(nets["trans"].stats)
        self.stats = stats

    def check_lookback(self, lookback: int) -> None:
        if lookback != self.lookback:
            raise ChkptMismatch(f"checkpoints were trained with l={self.lookback}, requested l={lookback}")

    def step(self, history):
        d = state_diffs(history)
        out = history[:, -1].copy()
        for part, sl in (("trans", slice(0, 3)), ("pose", slice(3, STATE_DIM))):
            x = self.stats.normalize_diff(part, d[:, :, sl])
            y = forward(self.nets[part].params, x)[0]
            out[:, sl] += self.stats.denormalize_diff(part, y)
        return _finish(out)


class MedianDiffPredictor(Predictor):
    """One-frame fallback: add the training-set median difference."""

    lookback = 1

    def __init__(self, median_diff):
        if median_diff is None:
            raise MissingStats("no training median difference available")
        self.median_diff = np.asarray(median_diff, dtype=float)
        if self.median_diff.shape != (STATE_DIM,):
            raise MissingStats(f"median difference must have {STATE_DIM} entries")

    def step(self, history):
        return _finish(history[:, -1] + self.median_diff)


class FrameDifferencePredictor(Predictor):
    """Apply the median of the observed differences; rollout keeps it fixed."""

    def __init__(self, lookback: int = 5):
        if lookback < 2:
            raise HistoryTooShort("frame-difference baseline needs at least 2 frames")
        self.lookback = lookback

    @staticmethod
    def median_difference(history: np.ndarray) -> np.ndarray:
        return np.median(state_diffs(history), axis=1)

    def step(self, history):
        return _finish(history[:, -1] + self.median_difference(history))

    def rollout(self, history, horizon: int) -> np.ndarray:
        h, single = _as_batch(history)
        self._check(h)
        h = h[:, -self.lookback:]
        d0 = self.median_difference(h)
        steps = np.arange(1, horizon + 1, dtype=float)[None, :, None]
        out = _finish(h[:, -1][:, None] + steps * d0[:, None])
        return out[0] if single else out


class PlainPredictor(Predictor):
    """Plain LSTM baselines reading absolute states.

    The trans+pose variant maps (l, 75) states to the next state; the
    skeleton variant maps (l, 72) joint positions to the next joint positions
    and therefore cannot provide pose or mesh outputs.
    """

    def __init__(self, nets: dict[str, NetworkWeights], stats: NormalizationStats | None = None):
        self.nets = nets
        self.emits_joints = set(nets) == {"joints"}
        if not self.emits_joints and set(nets) != {"trans", "pose"}:
            raise ChkptMismatch(f"unexpected plain network set {sorted(nets)}")
        first = next(iter(nets.values()))
        if any(n.config.mode != "absolute" for n in nets.values()):
            raise ChkptMismatch("plain predictor needs absolute-state networks")
        self.lookback = first.config.lookback
        self.stats = stats or NormalizationStats.from_dict(first.stats)

    def step(self, history):
        if self.emits_joints:
            x = self.stats.normalize_abs("joints", history)
            return self.stats.denormalize_abs("joints", forward(self.nets["joints"].params, x)[0])
        out = np.empty((history.shape[0], STATE_DIM))
        for part, sl in (("trans", slice(0, 3)), ("pose", slice(3, STATE_DIM))):
            x = self.stats.normalize_abs(part, history[:, :, sl])
            out[:, sl] = self.stats.denormalize_abs(part, forward(self.nets[part].params, x)[0])
        return _finish(out)


def history_joints(history: np.ndarray, model: BodyModel) -> np.ndarray:
    """Joint-position histories (N, l, 72) for the skeleton baseline."""
    n, l, _ = history.shape
    flat = history.reshape(-1, STATE_DIM)
    return fk_batch(flat[:, :3], flat[:, 3:], model)[0].reshape(n, l, -1)


# --- single-pedestrian API -----------------------------------------------------------

def _stack(history: list[BodyState]) -> np.ndarray:
    return np.stack([np.concatenate([s.trans, s.pose]) for s in history])


def _to_state(vec: np.ndarray, shape: np.ndarray) -> BodyState:
    return BodyState(vec[:3], vec[3:], shape.copy())


def predict_next(history: list[BodyState], predictor: Predictor) -> BodyState:
    if len(history) < predictor.lookback:
        raise HistoryTooShort(f"need {predictor.lookback} frames of history, got {len(history)}")
    return _to_state(predictor.predict_next(_stack(history)), history[-1].shape)


def predict_next_single(frame: BodyState, median_diff) -> BodyState:
    return predict_next([frame], MedianDiffPredictor(median_diff))


def rollout(history: list[BodyState], horizon: int, predictor: Predictor) -> list[BodyState]:
    if len(history) < predictor.lookback:
        raise HistoryTooShort(f"need {predictor.lookback} frames of history, got {len(history)}")
    out = predictor.rollout(_stack(history), horizon)
    return [_to_state(v, history[-1].shape) for v in out]


def baseline_frame_difference(history: list[BodyState]) -> BodyState:
    return predict_next(history, FrameDifferencePredictor(len(history)))


# --- output files ----------------------------------------------------------------------

def write_predictions(path: str | Path, rows: list[dict]) -> int:
    """JSON Lines, one record per (seq_id, person_id, frame_idx, horizon_step)."""
    try:
        with open(path, "w") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write predictions to {path}: {exc}") from exc
    return len(rows)


def prediction_record(seq_id, person_id, frame_idx, step, state: np.ndarray, shape: np.ndarray,
                      checkpoint_id: str, mode: str) -> dict:
    return {
        "seq_id": seq_id,
        "person_id": person_id,
        "frame_idx": int(frame_idx),
        "horizon_step": int(step),
        "trans": [float(v) for v in state[:3]],
        "pose": [float(v) for v in state[3:STATE_DIM]],
        "shape": [float(v) for v in shape],
        "checkpoint_id": checkpoint_id,
        "mode": mode,
    }
