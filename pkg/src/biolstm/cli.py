"""Command line: synth, train, predict, eval, export-mesh, stats.

Settings come from built-in defaults, then an optional JSON config file
(``--config``), then command-line flags, later sources winning.  Unknown
config keys are rejected before any work starts.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .body_model import BodyState, default_model, forward_kinematics, load_model, write_obj
from .data import ingest, window, write_jsonl
from .errors import EXIT_CONFIG, BioLSTMError, ConfigInvalid, DataIOError, HistoryTooShort, MeshUnavailable
from .evaluator import combine_runs, evaluate, ground_distance
from .pipeline import (METHODS, build_predictor, checkpoint_paths, load_checkpoints, method_parts, prepare,
                       save_checkpoints, fit)
from .predictor import history_joints, prediction_record, write_predictions
from .synth import SynthConfig, inject_outliers, synth_gait
from .training import TrainSettings

log = logging.getLogger("biolstm")

CONFIG_SCHEMA = 1


@dataclass
class RunConfig:
    schema: int = CONFIG_SCHEMA
    dataset: str | None = None
    truth: str | None = None           # noiseless dataset for evaluation, same keys
    body_model: str | None = None
    checkpoint_dir: str = "checkpoints"
    out_dir: str = "out"
    lookback: int = 5
    lambda1: float = 10.0
    lambda2: float = 0.01
    method: str = "bio_lc_ls_lg"
    methods: list = field(default_factory=lambda: ["bio_lc_ls_lg", "frame_diff"])
    units: int = 32
    layers: int = 2
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    split_ratios: list = field(default_factory=lambda: [0.85, 0.10, 0.05])
    horizons: list = field(default_factory=lambda: [1])
    rollout: int = 31
    fps: float = 6.0
    filter_outliers: bool = True
    s_trans: float = 0.6
    s_orient: float = math.pi / 2
    synth: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.schema != CONFIG_SCHEMA:
            raise ConfigInvalid(f"config schema {self.schema} is not supported (expected {CONFIG_SCHEMA})")
        if self.lookback < 1:
            raise ConfigInvalid("lookback must be at least 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigInvalid("loss weights must be non-negative")
        for m in [self.method, *self.methods]:
            if m not in METHODS:
                raise ConfigInvalid(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        r = self.split_ratios
        if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-6:
            raise ConfigInvalid(f"split ratios must be three non-negative numbers summing to 1, got {r}")
        if self.units <= 0 or self.layers <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigInvalid("units, layers, epochs and batch_size must be positive")
        if any(h < 1 for h in self.horizons) or self.rollout < 0:
            raise ConfigInvalid("horizons must be >= 1 and rollout >= 0")
        if not self.seeds:
            raise ConfigInvalid("seeds must not be empty")
        unknown = set(self.synth) - {f.name for f in dataclasses.fields(SynthConfig)}
        if unknown:
            raise ConfigInvalid(f"unknown synth keys {sorted(unknown)}")

    def settings(self, seed: int | None = None) -> TrainSettings:
        return TrainSettings(lookback=self.lookback, units=self.units, layers=self.layers, lr=self.lr,
                             epochs=self.epochs, batch_size=self.batch_size,
                             seed=self.seed if seed is None else seed)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise DataIOError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigInvalid("config file must hold a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigInvalid(f"unknown config keys {sorted(unknown)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**doc)
    cfg.validate()
    return cfg


# --- helpers -----------------------------------------------------------------------

def _model(cfg: RunConfig):
    return load_model(cfg.body_model) if cfg.body_model else default_model(with_mesh=True)


def _require(value, name: str):
    if not value:
        raise ConfigInvalid(f"--{name.replace('_', '-')} is required")
    return value


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def write_manifest(path: Path, command: str, cfg: RunConfig, outputs: dict, extra: dict | None = None) -> None:
    """Provenance manifest; ``created_at`` is the only run-dependent field."""
    doc = {
        "command": command,
        "version": __version__,
        "config": dataclasses.asdict(cfg),
        "outputs": {k: {"path": str(p), "sha256": _sha256(Path(p))} for k, p in sorted(outputs.items())},
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        doc.update(extra)
    _write_json(path, doc)


def _prepared(cfg: RunConfig, model, method: str, seed: int | None = None):
    seqs = ingest(_require(cfg.dataset, "dataset"))
    return seqs, prepare(seqs, model, cfg.lookback, tuple(cfg.split_ratios), cfg.seed if seed is None else seed,
                         filter_outliers=cfg.filter_outliers and method.startswith("bio_"),
                         s_trans=cfg.s_trans, s_orient=cfg.s_orient)


def _write_curves(path: Path, curves: list[dict]) -> None:
    if not curves:
        return
    cols = list(curves[0])
    lines = [",".join(cols)] + [",".join(repr(r[c]) for c in cols) for r in curves]
    path.write_text("\n".join(lines) + "\n")


# --- commands ----------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out: str, truth_out: str | None, outliers: float) -> dict:
    try:
        scfg = SynthConfig(**cfg.synth)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from exc
    noisy, clean = synth_gait(scfg, _model(cfg))
    if outliers > 0:
        noisy = inject_outliers(noisy, outliers, seed=scfg.seed)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = write_jsonl(noisy, out)
    outputs = {"dataset": out}
    if truth_out:
        write_jsonl(clean, truth_out)
        outputs["truth"] = Path(truth_out)
    write_manifest(out.with_suffix(".manifest.json"), "synth", cfg, outputs,
                   {"generator": scfg.to_dict(), "outlier_fraction": outliers, "records": n})
    return {"records": n, "sequences": len(noisy)}


def cmd_train(cfg: RunConfig) -> dict:
    method = cfg.method
    model = _model(cfg)
    seqs, prep = _prepared(cfg, model, method)
    ckpt = Path(cfg.checkpoint_dir)
    ckpt.mkdir(parents=True, exist_ok=True)
    stats_path = ckpt / f"{method}_stats.json"
    _write_json(stats_path, prep.stats.to_dict())
    prep.stats.write_csv(ckpt / f"{method}_stats.csv")
    outputs = {"stats": stats_path}
    summary = {"method": method, "train_sequences": len(prep.train), "val_sequences": len(prep.val),
               "test_sequences": len(prep.test), "filter": prep.filter_report}
    if method != "frame_diff":
        meta = {"dataset_sha256": _sha256(Path(cfg.dataset))}
        results = fit(method, prep, model, cfg.settings(), cfg.lambda1, cfg.lambda2, meta)
        for part, path in save_checkpoints(results, ckpt, method).items():
            outputs[f"checkpoint_{part}"] = path
            curve = ckpt / f"{method}_{part}_curves.csv"
            _write_curves(curve, results[part].curves)
            outputs[f"curves_{part}"] = curve
            summary[f"{part}_best_epoch"] = results[part].best_epoch
            summary[f"{part}_best_val_total"] = results[part].weights.meta["best_val_total"]
    write_manifest(ckpt / f"{method}_manifest.json", "train", cfg, outputs, {"summary": summary})
    return summary


def _load_predictor(cfg: RunConfig, method: str):
    nets = load_checkpoints(cfg.checkpoint_dir, method)
    return build_predictor(method, nets, cfg.lookback), nets


def _checkpoint_id(cfg: RunConfig, method: str) -> str:
    paths = checkpoint_paths(cfg.checkpoint_dir, method)
    if not paths:
        return method
    h = hashlib.sha256()
    for p in sorted(paths.values()):
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def cmd_predict(cfg: RunConfig, mode: str, horizon: int, out: str, split_name: str, obj_dir: str | None) -> dict:
    method = cfg.method
    model = _model(cfg)
    predictor, _ = _load_predictor(cfg, method)
    seqs, prep = _prepared(cfg, model, method)
    chosen = seqs if split_name == "all" else getattr(prep, split_name)
    ckpt_id = _checkpoint_id(cfg, method)
    l = cfg.lookback
    rows = []
    states_out = []     # (seq, frame_idx, state, shape) for OBJ export
    if mode == "next":
        w = window(chosen, l)
        if len(w) == 0:
            raise HistoryTooShort(f"no sequence in the {split_name} split has {l + 1} frames")
        hist = history_joints(w.history, model) if predictor.emits_joints else w.history
        pred = predictor.predict_next(hist)
        for i in range(len(w)):
            s = chosen[w.seq_index[i]]
            rows.append(_record(s, w.target_frame[i], 1, pred[i], w.shape[i], ckpt_id, method, predictor))
            states_out.append((s, w.target_frame[i], pred[i], w.shape[i]))
    else:
        short = [f"{s.seq_id}/{s.person_id}" for s in chosen if len(s) < l]
        if short:
            raise HistoryTooShort(f"sequences shorter than l={l}: {', '.join(short[:5])}")
        for s in chosen:
            hist = s.states[:l][None]
            hist = history_joints(hist, model) if predictor.emits_joints else hist
            traj = predictor.rollout(hist, horizon)[0]
            step_frames = int(s.frame_idx[l - 1])
            for k in range(horizon):
                rows.append(_record(s, step_frames + k + 1, k + 1, traj[k], s.shape[l - 1], ckpt_id, method, predictor))
                states_out.append((s, step_frames + k + 1, traj[k], s.shape[l - 1]))
    write_predictions(out, rows)
    if obj_dir:
        if predictor.emits_joints:
            raise MeshUnavailable("the skeleton baseline predicts joints only; no mesh to export")
        Path(obj_dir).mkdir(parents=True, exist_ok=True)
        for s, f, st, shape in states_out:
            posed = forward_kinematics(BodyState(st[:3], st[3:], shape), model, include_mesh=True)
            write_obj(Path(obj_dir) / f"{s.seq_id}_{s.person_id}_{int(f):06d}.obj", posed.vertices, model.mesh.faces)
    return {"records": len(rows), "method": method, "mode": mode}


def _record(seq, frame, step, state, shape, ckpt_id, method, predictor) -> dict:
    if predictor.emits_joints:
        return {"seq_id": seq.seq_id, "person_id": seq.person_id, "frame_idx": int(frame),
                "horizon_step": int(step), "joints": [float(v) for v in state],
                "checkpoint_id": ckpt_id, "mode": method}
    return prediction_record(seq.seq_id, seq.person_id, frame, step, state, shape, ckpt_id, method)


def cmd_eval(cfg: RunConfig, ground_audit: bool) -> dict:
    model = _model(cfg)
    truth = ingest(cfg.truth) if cfg.truth else None
    out_dir = Path(cfg.out_dir)
    reports = []
    audit = {}
    for seed in cfg.seeds:
        methods = {}
        test = None
        for m in cfg.methods:
            _, prep = _prepared(cfg, model, m)
            test = prep.test
            if m == "frame_diff":
                methods[m] = build_predictor(m, None, cfg.lookback)
            elif len(cfg.seeds) == 1:
                methods[m] = _load_predictor(cfg, m)[0]
            else:
                # several initializations: train each method per seed in memory
                res = fit(m, prep, model, cfg.settings(seed), cfg.lambda1, cfg.lambda2)
                methods[m] = build_predictor(m, {k: r.weights for k, r in res.items()}, cfg.lookback, prep.stats)
        rep = evaluate(methods, test, truth, model, cfg.lookback, tuple(cfg.horizons),
                       rollout_horizon=cfg.rollout or None, fps=cfg.fps)
        reports.append(rep)
        if ground_audit:
            for name in methods:
                vals = [r for r in rep.rows if r["method"] == name and r["group"] == "all"
                        and r["metric"] == "ground_distance" and r["horizon"] == 1]
                audit.setdefault(name, []).append(vals[0]["mean"])
    report = combine_runs(reports) if len(reports) > 1 else reports[0]
    paths = report.write(out_dir)
    if ground_audit:
        lines = ["method,ground_distance_mean,ground_distance_std,runs"]
        for name, vals in audit.items():
            v = np.array(vals, dtype=float)
            lines.append(f"{name},{'' if np.all(np.isnan(v)) else repr(float(np.nanmean(v)))},"
                         f"{'' if np.all(np.isnan(v)) else repr(float(np.nanstd(v)))},{len(v)}")
        p = out_dir / "ground_audit.csv"
        p.write_text("\n".join(lines) + "\n")
        paths["ground_audit"] = p
    write_manifest(out_dir / "eval_manifest.json", "eval", cfg, paths)
    vals = {name: report.value(name, "vertex_rmse") for name in cfg.methods}
    return {k: None if math.isnan(v) else v for k, v in vals.items()}


def cmd_export_mesh(cfg: RunConfig, out: str, rest: bool, seq_id: str | None, frame: int | None,
                    predictions: str | None, step: int) -> dict:
    model = _model(cfg)
    if model.mesh is None:
        raise MeshUnavailable("body model has no mesh")
    if rest:
        state = BodyState(np.zeros(3), np.zeros(72), np.zeros(10))
    elif predictions:
        state = _find_prediction(predictions, seq_id, frame, step)
    else:
        seqs = ingest(_require(cfg.dataset, "dataset"))
        match = [s for s in seqs if seq_id is None or s.seq_id == seq_id]
        if not match:
            raise ConfigInvalid(f"sequence {seq_id!r} not found")
        s = match[0]
        idx = 0 if frame is None else int(np.searchsorted(s.frame_idx, frame))
        if idx >= len(s) or (frame is not None and s.frame_idx[idx] != frame):
            raise ConfigInvalid(f"frame {frame} not in sequence {s.seq_id}")
        state = BodyState(s.trans[idx], s.pose[idx], s.shape[idx])
    verts = forward_kinematics(state, model, include_mesh=True).vertices
    write_obj(out, verts, model.mesh.faces)
    return {"vertices": int(verts.shape[0]), "path": out}


def _find_prediction(path: str, seq_id, frame, step) -> BodyState:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataIOError(f"cannot read predictions {path}: {exc}") from exc
    for line in lines:
        r = json.loads(line)
        if "trans" not in r:
            raise MeshUnavailable("prediction file holds joints only")
        if (seq_id is None or r["seq_id"] == seq_id) and (frame is None or r["frame_idx"] == frame) \
                and r["horizon_step"] == step:
            return BodyState(r["trans"], r["pose"], r["shape"])
    raise ConfigInvalid(f"no prediction for seq {seq_id} frame {frame} step {step}")


def cmd_stats(cfg: RunConfig) -> dict:
    model = _model(cfg)
    _, prep = _prepared(cfg, model, "bio_lc" if cfg.filter_outliers else "frame_diff")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "stats.json", prep.stats.to_dict())
    prep.stats.write_csv(out_dir / "stats.csv")
    gd = None
    if prep.train:
        s = prep.train[0]
        from .body_model import fk_batch
        j, g, _ = fk_batch(s.trans, s.pose, model)
        gd = ground_distance((j, g), model, s.ground_z)
    return {"train_sequences": len(prep.train), "val_sequences": len(prep.val), "test_sequences": len(prep.test),
            "trans_diff_scale": [float(v) for v in prep.stats.trans_diff_scale],
            "filter": prep.filter_report, "first_train_ground_distance": gd}


# --- argument parsing ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--dataset", help="JSON Lines dataset")
    p.add_argument("--body-model", dest="body_model", help="body model JSON (default: built-in template)")
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir", help="checkpoint directory (default: checkpoints)")
    p.add_argument("--out-dir", dest="out_dir", help="report directory (default: out)")
    p.add_argument("--lookback", type=int, help="look-back window l (default: 5)")
    p.add_argument("--method", choices=METHODS, help="method to train/predict (default: bio_lc_ls_lg)")
    p.add_argument("--seed", type=int, help="split and initialization seed (default: 0)")
    p.add_argument("--no-filter", dest="filter_outliers", action="store_const", const=False,
                   help="skip outlier filtering for bio methods")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biolstm", description="Biomechanics-aware pedestrian pose prediction.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gait dataset")
    _common(p)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--truth-out", help="also write the noiseless sequences here")
    p.add_argument("--n-sequences", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--noise", type=float, help="translation noise std (m)")
    p.add_argument("--pose-noise", type=float, help="pose noise std (rad)")
    p.add_argument("--period", type=float, help="gait period in frames")
    p.add_argument("--outliers", type=float, default=0.0, help="fraction of corrupted transitions")

    p = sub.add_parser("train", help="train a method's networks")
    _common(p)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--units", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("predict", help="next-frame prediction or rollout")
    _common(p)
    p.add_argument("--mode", choices=("next", "rollout"), default="next")
    p.add_argument("--horizon", type=int, default=31)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out", required=True, help="prediction JSONL path")
    p.add_argument("--obj-dir", help="also write one OBJ mesh per prediction")

    p = sub.add_parser("eval", help="metric tables, per-action rows and horizon curves")
    _common(p)
    p.add_argument("--truth", help="noiseless dataset to score against")
    p.add_argument("--methods", help="comma-separated methods")
    p.add_argument("--seeds", help="comma-separated seeds; more than one retrains per seed")
    p.add_argument("--horizons", help="comma-separated next-frame horizons (default: 1)")
    p.add_argument("--rollout", type=int, help="rollout length for horizon curves (0 disables)")
    p.add_argument("--ground-audit", action="store_true", help="also write ground_audit.csv")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("export-mesh", help="write an OBJ mesh")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--rest", action="store_true", help="export the rest pose")
    p.add_argument("--seq-id")
    p.add_argument("--frame", type=int)
    p.add_argument("--predictions", help="take the state from a prediction JSONL")
    p.add_argument("--step", type=int, default=1)

    p = sub.add_parser("stats", help="split, filter and write normalization statistics")
    _common(p)
    return ap


_CONFIG_FLAGS = ("dataset", "body_model", "checkpoint_dir", "out_dir", "lookback", "method", "seed",
                 "filter_outliers", "lambda1", "lambda2", "epochs", "batch_size", "units", "lr", "truth",
                 "rollout")


def _overrides(args) -> dict:
    out = {k: getattr(args, k) for k in _CONFIG_FLAGS if hasattr(args, k)}
    for name, conv in (("methods", str), ("seeds", int), ("horizons", int)):
        raw = getattr(args, name, None)
        if raw:
            out[name] = [conv(x.strip()) for x in raw.split(",") if x.strip()]
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "synth":
            synth_over = {"n_sequences": args.n_sequences, "frames": args.frames, "noise": args.noise,
                          "pose_noise": args.pose_noise, "period": args.period, "seed": args.seed}
            cfg.synth = dict(cfg.synth, **{k: v for k, v in synth_over.items() if v is not None})
            cfg.validate()
            result = cmd_synth(cfg, args.out, args.truth_out, args.outliers)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "predict":
            result = cmd_predict(cfg, args.mode, args.horizon, args.out, args.split, args.obj_dir)
        elif args.command == "eval":
            result = cmd_eval(cfg, args.ground_audit)
        elif args.command == "export-mesh":
            result = cmd_export_mesh(cfg, args.out, args.rest, args.seq_id, args.frame, args.predictions, args.step)
        else:
            result = cmd_stats(cfg)
    except BioLSTMError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except TypeError as exc:
        # RunConfig(**doc) with a wrongly typed value
        print(f"error: ConfigInvalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
