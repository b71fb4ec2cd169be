"""Method registry and the split/filter/fit pipeline shared by CLI and benchmark."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

from .body_model import BodyModel
from .data import NormalizationStats, PoseSequence, compute_stats, filter_all, split, window
from .errors import ChkptMismatch, ConfigInvalid, DataIOError, EmptySplit
from .network import NetworkWeights, TrainResult
from .objective import LossWeights
from .predictor import BioPredictor, FrameDifferencePredictor, PlainPredictor, Predictor
from .training import TrainSettings, train_bio, train_plain, weights_of

log = logging.getLogger(__name__)

METHODS = ("bio_lc", "bio_lc_ls", "bio_lc_ls_lg", "frame_diff", "plain_transpose", "plain_skeleton")


def method_weights(method: str, lambda1: float, lambda2: float) -> LossWeights:
    """Loss weights a bio method trains with; the suffix names the active terms."""
    if method == "bio_lc":
        return LossWeights(0.0, 0.0)
    if method == "bio_lc_ls":
        return LossWeights(lambda1, 0.0)
    if method == "bio_lc_ls_lg":
        return LossWeights(lambda1, lambda2)
    raise ConfigInvalid(f"{method} is not a bio-LSTM method")


def method_parts(method: str) -> tuple[str, ...]:
    if method.startswith("bio_") or method == "plain_transpose":
        return ("trans", "pose")
    if method == "plain_skeleton":
        return ("joints",)
    return ()


@dataclass
class Prepared:
    train: list
    val: list
    test: list
    stats: NormalizationStats
    filter_report: dict | None = None


def prepare(sequences: list[PoseSequence], model: BodyModel, lookback: int, ratios, seed: int,
            filter_outliers: bool, s_trans: float = 0.6, s_orient: float = math.pi / 2) -> Prepared:
    """Split at sequence level, optionally filter train/val, and fit statistics.

    The test split is never filtered so every method is scored on the same
    windows.
    """
    parts = split(sequences, ratios, seed)
    train, val = parts["train"], parts["val"]
    report = None
    if filter_outliers:
        train, rep_t = filter_all(train, lookback, s_trans, s_orient)
        val, rep_v = filter_all(val, lookback, s_trans, s_orient)
        rep_t.merge(rep_v)
        report = vars(rep_t)
    if not train:
        raise EmptySplit("no training sequence survives filtering")
    stats = compute_stats(train, model)
    return Prepared(train, val, parts["test"], stats, report)


def fit(method: str, prep: Prepared, model: BodyModel, settings: TrainSettings,
        lambda1: float = 10.0, lambda2: float = 0.01, meta: dict | None = None) -> dict[str, TrainResult]:
    tw, vw = window(prep.train, settings.lookback), window(prep.val, settings.lookback)
    if len(tw) == 0:
        raise EmptySplit(f"training split has no windows of length {settings.lookback + 1}")
    if len(vw) == 0:
        raise EmptySplit(f"validation split has no windows of length {settings.lookback + 1}")
    meta = dict(meta or {}, method=method)
    if method.startswith("bio_"):
        return train_bio(tw, vw, prep.stats, model, method_weights(method, lambda1, lambda2), settings, meta)
    if method == "plain_transpose":
        return train_plain(tw, vw, prep.stats, model, "transpose", settings, meta)
    if method == "plain_skeleton":
        return train_plain(tw, vw, prep.stats, model, "skeleton", settings, meta)
    raise ConfigInvalid(f"method {method} has nothing to train")


def build_predictor(method: str, nets: dict[str, NetworkWeights] | None, lookback: int,
                    stats: NormalizationStats | None = None) -> Predictor:
    if method == "frame_diff":
        return FrameDifferencePredictor(lookback)
    if method not in METHODS:
        raise ConfigInvalid(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method.startswith("bio_"):
        pred = BioPredictor(nets, stats)
        pred.check_lookback(lookback)
        return pred
    pred = PlainPredictor(nets, stats)
    if pred.lookback != lookback:
        raise ChkptMismatch(f"checkpoints were trained with l={pred.lookback}, requested l={lookback}")
    return pred


def checkpoint_paths(ckpt_dir: str | Path, method: str) -> dict[str, Path]:
    return {part: Path(ckpt_dir) / f"{method}_{part}.json" for part in method_parts(method)}


def save_checkpoints(results: dict[str, TrainResult], ckpt_dir: str | Path, method: str) -> dict[str, Path]:
    paths = checkpoint_paths(ckpt_dir, method)
    for part, path in paths.items():
        results[part].weights.save(path)
    return paths


def load_checkpoints(ckpt_dir: str | Path, method: str) -> dict[str, NetworkWeights] | None:
    paths = checkpoint_paths(ckpt_dir, method)
    if not paths:
        return None
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise DataIOError(f"missing checkpoint files for {method}: {', '.join(missing)}")
    return {part: NetworkWeights.load(p) for part, p in paths.items()}


def fitted_predictor(method: str, prep: Prepared, model: BodyModel, settings: TrainSettings,
                     lambda1: float = 10.0, lambda2: float = 0.01) -> Predictor:
    """Train (if needed) and wrap a method as a predictor."""
    if method == "frame_diff":
        return FrameDifferencePredictor(settings.lookback)
    results = fit(method, prep, model, settings, lambda1, lambda2)
    return build_predictor(method, weights_of(results), settings.lookback, prep.stats)
