"""Stacked LSTM with a dense head, trained by Adam.

Gate layout inside each layer's weight matrix (rows, blocks of ``units``):
input, forget, cell candidate, output.  Each layer's weight acts on the
concatenation [x_t, h_{t-1}].
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChkptMismatch, ConfigInvalid, DataIOError, DimensionMismatch, EmptySplit, NonFiniteLoss, StaleCache

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "biolstm-checkpoint/1"


@dataclass
class NetworkConfig:
    input_dim: int
    output_dim: int | None = None
    layers: int = 2
    units: int = 32
    lookback: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    part: str = "trans"      # trans | pose | joints
    mode: str = "diff"       # diff (bio-LSTM) | absolute (plain baseline)

    def __post_init__(self):
        if self.output_dim is None:
            self.output_dim = self.input_dim
        if self.units <= 0 or self.layers <= 0 or self.input_dim <= 0:
            raise ConfigInvalid("units, layers and input_dim must be positive")
        if self.mode == "diff" and self.lookback < 2:
            raise ConfigInvalid("network training needs a look-back window of at least 2")
        if self.mode not in ("diff", "absolute") or self.part not in ("trans", "pose", "joints"):
            raise ConfigInvalid(f"unknown mode/part {self.mode}/{self.part}")

    @property
    def steps(self) -> int:
        """Input sequence length: l-1 differences or l absolute frames."""
        return self.lookback - 1 if self.mode == "diff" else self.lookback


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_params(cfg: NetworkConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; forget-gate bias 1."""
    params = {}
    H = cfg.units
    n_in = cfg.input_dim
    for k in range(cfg.layers):
        fan_in = n_in + H
        bound = 1.0 / math.sqrt(fan_in)
        params[f"W{k}"] = rng.uniform(-bound, bound, size=(4 * H, fan_in))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        params[f"b{k}"] = b
        n_in = H
    bound = 1.0 / math.sqrt(H)
    params["Wd"] = rng.uniform(-bound, bound, size=(cfg.output_dim, H))
    params["bd"] = np.zeros(cfg.output_dim)
    return params


def zero_params(cfg: NetworkConfig) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in init_params(cfg, np.random.default_rng(0)).items()}


def forward(params: dict, x: np.ndarray):
    """Run the stack on x (N, T, q); returns (prediction (N, q_out), cache)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    n_layers = sum(1 for k in params if k.startswith("W") and k != "Wd")
    N, T, _ = x.shape
    expected_in = params["W0"].shape[1] - params["W0"].shape[0] // 4
    if x.shape[2] != expected_in:
        raise DimensionMismatch(f"network expects {expected_in} inputs per step, got {x.shape[2]}")
    layer_in = x
    caches = []
    for k in range(n_layers):
        W, b = params[f"W{k}"], params[f"b{k}"]
        H = W.shape[0] // 4
        h = np.zeros((N, H))
        c = np.zeros((N, H))
        hs = np.empty((N, T, H))
        cache = {"z": [], "gates": [], "c": [], "tc": [], "c_prev": [], "h_prev": []}
        for t in range(T):
            z = np.concatenate([layer_in[:, t], h], axis=1)
            a = z @ W.T + b
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = sigmoid(a[:, 3 * H:])
            cache["c_prev"].append(c)
            cache["h_prev"].append(h)
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t] = h
            cache["z"].append(z)
            cache["gates"].append((i, f, g, o))
            cache["c"].append(c)
            cache["tc"].append(tc)
        caches.append(cache)
        layer_in = hs
    h_last = layer_in[:, -1]
    y = h_last @ params["Wd"].T + params["bd"]
    return y, {"x": x, "layers": caches, "h_last": h_last, "n_layers": n_layers, "T": T}


def backward(params: dict, cache: dict, dy: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagation through time; returns gradients keyed like params."""
    dy = np.asarray(dy, dtype=float)
    if dy.shape != (cache["h_last"].shape[0], params["Wd"].shape[0]):
        raise StaleCache(f"upstream gradient {dy.shape} does not match cached forward pass")
    grads = {"Wd": dy.T @ cache["h_last"], "bd": dy.sum(axis=0)}
    T = cache["T"]
    N = dy.shape[0]
    # gradient arriving at each layer's hidden outputs, (N, T, H)
    H_top = params["Wd"].shape[1]
    dh_seq = np.zeros((N, T, H_top))
    dh_seq[:, -1] = dy @ params["Wd"]
    for k in reversed(range(cache["n_layers"])):
        W = params[f"W{k}"]
        H = W.shape[0] // 4
        n_in = W.shape[1] - H
        lc = cache["layers"][k]
        dW = np.zeros_like(W)
        db = np.zeros(4 * H)
        dx_seq = np.zeros((N, T, n_in))
        dh_next = np.zeros((N, H))
        dc_next = np.zeros((N, H))
        for t in reversed(range(T)):
            i, f, g, o = lc["gates"][t]
            tc = lc["tc"][t]
            dh = dh_seq[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * lc["c_prev"][t]
            dc_next = dc * f
            da = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            dW += da.T @ lc["z"][t]
            db += da.sum(axis=0)
            dz = da @ W
            dx_seq[:, t] = dz[:, :n_in]
            dh_next = dz[:, n_in:]
        grads[f"W{k}"] = dW
        grads[f"b{k}"] = db
        dh_seq = dx_seq
    grads["x"] = dh_seq
    return grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state.m.get(k, np.zeros_like(p)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(k, np.zeros_like(p)) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new, t)


# --- checkpoints -------------------------------------------------------------------

@dataclass
class NetworkWeights:
    config: NetworkConfig
    params: dict
    stats: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    optimizer: AdamState | None = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward(self.params, x)[0]

    def to_dict(self, include_optimizer: bool = False) -> dict:
        def enc(arrs):
            return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(arrs.items())}

        doc = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "params": enc(self.params),
            "stats": self.stats,
            "meta": self.meta,
        }
        if include_optimizer and self.optimizer is not None:
            doc["optimizer"] = {"t": self.optimizer.t, "m": enc(self.optimizer.m), "v": enc(self.optimizer.v)}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> NetworkWeights:
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ChkptMismatch(f"unsupported checkpoint format {doc.get('format')!r}")

        def dec(d):
            return {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d.items()}

        opt = None
        if "optimizer" in doc:
            o = doc["optimizer"]
            opt = AdamState(dec(o["m"]), dec(o["v"]), int(o["t"]))
        return cls(NetworkConfig(**doc["config"]), dec(doc["params"]), doc.get("stats", {}),
                   doc.get("meta", {}), opt)

    def save(self, path: str | Path, include_optimizer: bool = False) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(include_optimizer), sort_keys=True))
        except OSError as exc:
            raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> NetworkWeights:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ChkptMismatch(f"checkpoint {path} is not valid JSON") from exc
        return cls.from_dict(doc)


# --- training -----------------------------------------------------------------------

class Task:
    """A split's inputs/targets plus the loss used on network outputs.

    Subclasses implement ``loss(pred, idx, need_grad)`` returning
    (breakdown dict, gradient w.r.t. pred or None).
    """

    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def loss(self, pred, idx, need_grad=True):
        raise NotImplementedError


@dataclass
class TrainResult:
    weights: NetworkWeights
    curves: list = field(default_factory=list)
    best_epoch: int = -1


def _evaluate(params, task: Task, batch: int = 512) -> dict:
    totals, n = {}, len(task)
    for start in range(0, n, batch):
        idx = np.arange(start, min(n, start + batch))
        pred = forward(params, task.inputs[idx])[0]
        parts, _ = task.loss(pred, idx, need_grad=False)
        for k, v in parts.items():
            totals[k] = totals.get(k, 0.0) + v * len(idx)
    return {k: v / n for k, v in totals.items()}


def train(cfg: NetworkConfig, train_task: Task, val_task: Task, stats: dict | None = None,
          meta: dict | None = None, callback=None) -> TrainResult:
    """Mini-batch Adam; keeps the parameters with the lowest validation total."""
    if len(train_task) == 0:
        raise EmptySplit("training split has no windows")
    if len(val_task) == 0:
        raise EmptySplit("validation split has no windows")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, rng)
    state = AdamState()
    best, best_loss, best_epoch = copy.deepcopy(params), math.inf, -1
    curves = []
    n = len(train_task)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums, seen = {}, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred, cache = forward(params, train_task.inputs[idx])
            parts, dpred = train_task.loss(pred, idx, need_grad=True)
            if not all(math.isfinite(v) for v in parts.values()):
                raise NonFiniteLoss(f"epoch {epoch} batch at {start}: loss {parts}")
            grads = backward(params, cache, dpred)
            params, state = adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
            seen += len(idx)
        val = _evaluate(params, val_task)
        if not math.isfinite(val["total"]):
            raise NonFiniteLoss(f"epoch {epoch}: validation loss {val}")
        row = {"epoch": epoch}
        row.update({f"train_{k}": v / seen for k, v in sums.items()})
        row.update({f"val_{k}": v for k, v in val.items()})
        curves.append(row)
        if val["total"] < best_loss:
            best, best_loss, best_epoch = copy.deepcopy(params), val["total"], epoch
        if callback is not None:
            callback(row)
    meta = dict(meta or {})
    meta.update({"best_epoch": best_epoch, "best_val_total": best_loss})
    weights = NetworkWeights(cfg, best, stats or {}, meta, state)
    return TrainResult(weights, curves, best_epoch)
