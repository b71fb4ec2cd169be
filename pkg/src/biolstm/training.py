"""Training tasks and the two-network training drivers.

A bio-LSTM is a pair of networks, one for translation (3 outputs) and one
for pose (72 outputs), both reading l-1 normalized frame differences.  The
plain baselines read l absolute states and regress the next absolute state
with mean absolute error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .body_model import BodyModel, fk_batch
from .data import STATE_DIM, NormalizationStats, Windows
from .network import NetworkConfig, NetworkWeights, Task, TrainResult, train
from .objective import LossWeights, total_loss

log = logging.getLogger(__name__)

PARTS = {"trans": slice(0, 3), "pose": slice(3, STATE_DIM)}


class DiffTask(Task):
    """Next-difference regression under the biomechanics objective."""

    def __init__(self, windows: Windows, part: str, stats: NormalizationStats,
                 model: BodyModel, weights: LossWeights):
        self.part = part
        self.inputs = windows.inputs(part, stats)
        self.targets = windows.targets(part, stats)
        self.prev = windows.prev
        self.next = windows.next
        self.ground_z = windows.ground_z
        self.scale = stats.diff_scale(part)
        self.model = model
        self.weights = weights

    def loss(self, pred, idx, need_grad=True):
        br, grad = total_loss(pred, self.targets[idx], self.part, self.prev[idx], self.next[idx],
                              self.ground_z[idx], self.model, self.weights, self.scale, need_grad)
        return br.as_dict(), (grad if need_grad else None)


def joint_windows(windows: Windows, model: BodyModel) -> np.ndarray:
    """Global joint positions (N, l+1, 72) of every window frame."""
    n, span, _ = windows.states.shape
    flat = windows.states.reshape(-1, STATE_DIM)
    joints = fk_batch(flat[:, :3], flat[:, 3:], model)[0]
    return joints.reshape(n, span, -1)


class AbsoluteTask(Task):
    """Plain next-state regression on absolute, min/max-normalized values."""

    def __init__(self, windows: Windows, part: str, stats: NormalizationStats,
                 model: BodyModel | None = None):
        self.part = part
        if part == "joints":
            values = joint_windows(windows, model)
        else:
            values = windows.states[..., PARTS[part]]
        norm = stats.normalize_abs(part, values)
        self.inputs = norm[:, :-1]
        self.targets = norm[:, -1]

    def loss(self, pred, idx, need_grad=True):
        diff = self.targets[idx] - pred
        L_c = float(np.mean(np.abs(diff)))
        parts = {"L_c": L_c, "L_s": 0.0, "L_g": 0.0, "total": L_c}
        grad = -np.sign(diff) / diff.size if need_grad else None
        return parts, grad


@dataclass
class TrainSettings:
    lookback: int = 5
    units: int = 32
    layers: int = 2
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0


def _config(part: str, mode: str, s: TrainSettings, seed_offset: int) -> NetworkConfig:
    q = 3 if part == "trans" else 72
    return NetworkConfig(input_dim=q, output_dim=q, layers=s.layers, units=s.units,
                         lookback=s.lookback, lr=s.lr, epochs=s.epochs, batch_size=s.batch_size,
                         seed=s.seed + seed_offset, part=part, mode=mode)


def train_bio(train_w: Windows, val_w: Windows, stats: NormalizationStats, model: BodyModel,
              weights: LossWeights, settings: TrainSettings, meta: dict | None = None
              ) -> dict[str, TrainResult]:
    """Train the translation and pose networks independently."""
    out = {}
    for offset, part in enumerate(("trans", "pose")):
        cfg = _config(part, "diff", settings, offset)
        m = dict(meta or {}, method_weights={"lambda1": weights.lambda1, "lambda2": weights.lambda2})
        out[part] = train(cfg, DiffTask(train_w, part, stats, model, weights),
                          DiffTask(val_w, part, stats, model, weights), stats.to_dict(), m)
        log.info("%s network: best epoch %d", part, out[part].best_epoch)
    return out


def train_plain(train_w: Windows, val_w: Windows, stats: NormalizationStats, model: BodyModel,
                variant: str, settings: TrainSettings, meta: dict | None = None
                ) -> dict[str, TrainResult]:
    """Plain LSTM baselines; ``variant`` is 'transpose' or 'skeleton'."""
    parts = ("trans", "pose") if variant == "transpose" else ("joints",)
    out = {}
    for offset, part in enumerate(parts):
        cfg = _config(part, "absolute", settings, offset)
        out[part] = train(cfg, AbsoluteTask(train_w, part, stats, model),
                          AbsoluteTask(val_w, part, stats, model), stats.to_dict(), dict(meta or {}))
    return out


def weights_of(results: dict[str, TrainResult]) -> dict[str, NetworkWeights]:
    return {k: r.weights for k, r in results.items()}
