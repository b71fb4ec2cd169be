"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL verdict line (shown in the pytest terminal
summary) and then asserts the criterion at its stated tolerance.  The
directional benchmarks share one synthetic noisy-gait suite:

* training data: 60 sequences x 40 frames, action mix weighted towards
  walking, translation and pose noise sigma 0.01, seed 1
* held-out test data: 20 sequences x 40 frames, seed 99, scored against
  the noiseless generator output
* networks: 2 x 32 units, l = 5, Adam lr 1e-3, batch 64, 100 epochs
"""

from __future__ import annotations

import json
import math
import shutil
import time

import numpy as np
import pytest

from acceptance_log import note, verdict
from biolstm.body_model import BodyState, default_model, forward_kinematics, leg_shoulder_angles
from biolstm.cli import main
from biolstm.evaluator import combine_runs, evaluate
from biolstm.network import NetworkWeights, backward, forward
from biolstm.objective import LossWeights, ground_volume_loss, symmetry_loss, total_loss
from biolstm.pipeline import build_predictor, fit, prepare
from biolstm.predictor import FrameDifferencePredictor
from biolstm.synth import SynthConfig, inject_outliers, synth_gait
from biolstm.training import TrainSettings, weights_of
from helpers import naive_lstm, random_params, symmetric_pose

MIX = {"walk": 3, "cup": 1, "phone": 1, "carry-left": 1, "push-bike": 1, "cycling": 1}
NOISE = dict(noise=0.01, pose_noise=0.01)
SEEDS = (0, 1, 2)
EPOCHS = 100
LOOKBACK = 5
RATIOS = (0.85, 0.10, 0.05)
GROUND_AUDIT_LAMBDA2 = 10.0


# --- shared benchmark -----------------------------------------------------------------

class Bench:
    def __init__(self):
        self.model = default_model(with_mesh=True)
        self.train, _ = synth_gait(SynthConfig(n_sequences=60, frames=40, seed=1, actions=MIX, **NOISE), self.model)
        self.test, self.truth = synth_gait(SynthConfig(n_sequences=20, frames=40, seed=99, actions=MIX, **NOISE),
                                           self.model)
        self._prep = {}
        self.predictors = {}

    def prepared(self, data_key: str, filtered: bool, sequences=None):
        key = (data_key, filtered)
        if key not in self._prep:
            self._prep[key] = prepare(sequences if sequences is not None else self.train, self.model, LOOKBACK,
                                      RATIOS, 0, filter_outliers=filtered)
        return self._prep[key]

    def predictor(self, method: str, seed: int = 0, data_key: str = "clean", sequences=None,
                  lambda1: float = 10.0, lambda2: float = 0.01, epochs: int = EPOCHS):
        key = (method, seed, data_key, lambda1, lambda2, epochs)
        if key not in self.predictors:
            prep = self.prepared(data_key, method.startswith("bio_"), sequences)
            s = TrainSettings(lookback=LOOKBACK, epochs=epochs, seed=seed)
            res = fit(method, prep, self.model, s, lambda1, lambda2)
            self.predictors[key] = build_predictor(method, weights_of(res), LOOKBACK, prep.stats)
        return self.predictors[key]

    def report(self, methods: dict, rollout: bool = False):
        return evaluate(methods, self.test, self.truth, self.model, LOOKBACK, by_action=False,
                        rollout_horizon=31 if rollout else None)


@pytest.fixture(scope="module")
def bench():
    return Bench()


@pytest.fixture(scope="module")
def next_frame_runs(bench):
    t0 = time.time()
    reports = []
    for seed in SEEDS:
        methods = {
            "bio_lc": bench.predictor("bio_lc", seed),
            "frame_diff": FrameDifferencePredictor(LOOKBACK),
            "plain_transpose": bench.predictor("plain_transpose", seed),
        }
        reports.append(bench.report(methods, rollout=True))
    return reports, time.time() - t0


# --- criteria ---------------------------------------------------------------------------

def test_gradient_suite():
    """Network + Rodrigues + FK + both bio terms against central differences."""
    model = default_model(with_mesh=False)
    rng = np.random.default_rng(2024)
    h, eps = 1e-5, np.finfo(float).eps
    t0 = time.time()
    worst, checks, floor_bound = 0.0, 0, 0
    failures = []
    n_configs = 120
    for c in range(n_configs):
        part, q = (("trans", 3), ("pose", 72))[c % 2]
        n, steps = 2, int(rng.integers(1, 5))
        params = random_params(rng, q, units=4, scale=0.5)
        x = rng.normal(scale=0.5, size=(n, steps, q))
        prev = np.concatenate([rng.normal(scale=0.1, size=(n, 3)) + [0, 0, 0.93],
                               rng.normal(scale=0.3, size=(n, 72))], axis=1)
        nxt = prev + rng.normal(scale=0.05, size=prev.shape)
        scale = rng.uniform(0.05, 0.5, size=3) if part == "trans" else np.full(72, math.pi)
        target = rng.normal(scale=0.3, size=(n, q))
        weights = LossWeights(*[(10.0, 0.01), (10.0, 100.0), (1.0, 10.0)][c % 3])
        gz = rng.normal(scale=0.02, size=n)

        def f(p):
            y = forward(p, x)[0]
            return total_loss(y, target, part, prev, nxt, gz, model, weights, scale, need_grad=False)[0].total

        y, cache = forward(params, x)
        _, dy = total_loss(y, target, part, prev, nxt, gz, model, weights, scale)
        grads = backward(params, cache, dy)
        f0 = abs(f(params))
        keys = sorted(params)
        for _ in range(10):
            k = keys[rng.integers(len(keys))]
            idx = tuple(int(rng.integers(s)) for s in params[k].shape)
            p1 = {a: b.copy() for a, b in params.items()}
            p2 = {a: b.copy() for a, b in params.items()}
            p1[k][idx] += h
            p2[k][idx] -= h
            fd = (f(p1) - f(p2)) / (2 * h)
            a = grads[k][idx]
            # relative error, with the rounding error of the difference quotient as the floor
            noise = 100 * eps * max(f0, 1.0) / h
            rel = abs(a - fd) / max(abs(a), abs(fd), noise / 1e-4)
            if max(abs(a), abs(fd)) < noise / 1e-4:
                floor_bound += 1
            worst = max(worst, rel)
            checks += 1
            if rel >= 1e-4:
                failures.append((c, part, k, idx, a, fd))
    elapsed = time.time() - t0
    ok = not failures and elapsed < 120 and n_configs >= 100
    verdict("gradient suite", ok,
            f"{n_configs} configs (q=3 and q=72, width 4), {checks} checks, max rel err {worst:.2e} "
            f"({floor_bound} at the rounding floor), {elapsed:.1f} s")
    assert ok, failures[:3]


def test_loss_identities():
    model = default_model(with_mesh=False)
    rng = np.random.default_rng(5)
    worst_s = 0.0
    for _ in range(20):
        pose = symmetric_pose(rng)
        posed = forward_kinematics(BodyState(np.zeros(3), pose, np.zeros(10)), model)
        worst_s = max(worst_s, symmetry_loss(leg_shoulder_angles(posed, model)))
    c = math.cos(math.pi / 6)
    table = [
        (ground_volume_loss(0.0, 0.0, 0.25, 0.1), 0.0),
        (ground_volume_loss(0.05, 0.0, 0.25, 0.1), 1.25e-3),
        (ground_volume_loss(0.2, math.pi / 6, 0.2, 0.1), 0.1 * 0.2 * 0.2 * c - 0.5 * 0.1 * (0.2 * 0.5) * (0.2 * c)),
    ]
    vol_err = max(abs(a - b) for a, b in table)
    rounded_ok = abs(table[2][0] - 2.5981e-3) < 5e-8
    worst_total = 0.0
    for _ in range(50):
        n, part = 3, ("trans", "pose")[int(rng.integers(2))]
        q = 3 if part == "trans" else 72
        prev = np.concatenate([rng.normal(scale=0.1, size=(n, 3)) + [0, 0, 0.93], rng.normal(scale=0.3, size=(n, 72))], 1)
        br, _ = total_loss(rng.normal(size=(n, q)), rng.normal(size=(n, q)), part, prev, prev, np.zeros(n), model,
                           LossWeights(10.0, 0.01), np.full(q, 0.1), need_grad=False)
        worst_total = max(worst_total, abs(br.total - (br.L_c + 10.0 * br.L_s + 0.01 * br.L_g)))
    ok = worst_s < 1e-12 and vol_err <= 1e-12 and rounded_ok and worst_total <= 1e-12
    verdict("loss identities", ok,
            f"max L_s on mirrored poses {worst_s:.1e}; ground volume table err {vol_err:.1e}; "
            f"max |total - (L_c + 10 L_s + 0.01 L_g)| {worst_total:.1e}")
    assert ok


def test_oracle_equivalence():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        q = int(rng.choice([3, 72]))
        params = random_params(rng, q, units=int(rng.integers(2, 9)), scale=0.4)
        x = rng.normal(size=(2, int(rng.integers(1, 6)), q))
        y = forward(params, x)[0]
        for i in range(2):
            worst = max(worst, float(np.abs(y[i] - naive_lstm(params, x[i])).max()))
    ok = worst <= 1e-12
    verdict("oracle equivalence", ok, f"50 random weight sets, max |vectorized - naive| {worst:.1e}")
    assert ok


def test_next_frame_ordering(next_frame_runs):
    reports, elapsed = next_frame_runs
    v = {m: np.mean([r.value(m, "vertex_rmse") for r in reports]) for m in ("bio_lc", "frame_diff", "plain_transpose")}
    gain_fd = 1 - v["bio_lc"] / v["frame_diff"]
    gain_plain = 1 - v["bio_lc"] / v["plain_transpose"]
    ok = gain_fd >= 0.15 and gain_plain >= 0.15 and elapsed < 900
    verdict("next-frame ordering", ok,
            f"vertex RMSE mean over seeds {list(SEEDS)}: bio_lc {v['bio_lc']:.4f} m, frame_diff {v['frame_diff']:.4f} m, "
            f"plain_transpose {v['plain_transpose']:.4f} m; improvement {gain_fd:.1%} vs frame_diff, "
            f"{gain_plain:.1%} vs plain; {elapsed:.0f} s")
    assert ok


def test_rollout_horizon(next_frame_runs):
    reports, _ = next_frame_runs
    mean = combine_runs(reports)
    curves = {m: mean.curve(m) for m in ("bio_lc", "frame_diff", "plain_transpose")}
    seconds = np.array([r["seconds"] for r in mean.curves if r["method"] == "bio_lc"])
    first_zero = all(np.all(c[:5] == 0.0) for c in curves.values()) and \
        all(np.all(r.curve(m)[:5] == 0.0) for r in reports for m in curves)
    late = seconds >= 1.0 - 1e-9
    beats = late & (curves["bio_lc"] < curves["frame_diff"]) & (curves["bio_lc"] < curves["plain_transpose"])
    ok = first_zero and bool(np.all(beats[late]))
    losing = seconds[late & ~beats]
    pts = {s: (curves["bio_lc"][i], curves["frame_diff"][i], curves["plain_transpose"][i])
           for i, s in enumerate(seconds) if i in (6, 12, 18, 24, 30, 35)}
    desc = "; ".join(f"{s:.1f}s {b:.3f}/{f:.3f}/{p:.3f}" for s, (b, f, p) in pts.items())
    verdict("rollout horizon", ok,
            f"first 5 errors zero: {first_zero}; median trans error bio/frame_diff/plain: {desc}; "
            f"bio not lowest at {len(losing)} of {int(late.sum())} horizons >= 1 s"
            + (f" (from {losing.min():.2f} s)" if len(losing) else ""))
    assert ok


def test_ground_contact(bench):
    without = bench.predictor("bio_lc_ls", 0, lambda1=10.0, lambda2=0.0, epochs=60)
    audit = bench.predictor("bio_lc_ls_lg", 0, lambda1=10.0, lambda2=GROUND_AUDIT_LAMBDA2, epochs=60)
    default = bench.predictor("bio_lc_ls_lg", 0, lambda1=10.0, lambda2=0.01, epochs=60)
    rep = bench.report({"without": without, "audit": audit, "default": default})
    g = {k: rep.value(k, "ground_distance") for k in ("without", "audit", "default")}
    cut = 1 - g["audit"] / g["without"]
    cut_default = 1 - g["default"] / g["without"]
    ok = cut >= 0.20
    verdict("ground contact", ok,
            f"mean ground distance without L_g {g['without']:.4f} m, with L_g (lambda2={GROUND_AUDIT_LAMBDA2:g}) "
            f"{g['audit']:.4f} m: {cut:.1%} reduction")
    note("ground contact at lambda2=0.01",
         f"with default lambda2 {g['default']:.4f} m: {cut_default:.1%} reduction")
    assert ok


def test_outlier_robustness(bench):
    dirty = inject_outliers(bench.train, fraction=0.1, seed=3)
    models = {}
    for method in ("bio_lc", "plain_transpose"):
        models[method] = bench.predictor(method, 0)
        models[method + "_outliers"] = bench.predictor(method, 0, data_key="outliers", sequences=dirty)
    prep = bench.prepared("outliers", True, dirty)
    rep = bench.report(models)
    v = {k: rep.value(k, "vertex_rmse") for k in models}
    bio = v["bio_lc_outliers"] / v["bio_lc"] - 1
    plain = v["plain_transpose_outliers"] / v["plain_transpose"] - 1
    ok = bio < 0.25 and plain > 1.0
    verdict("outlier robustness", ok,
            f"vertex RMSE clean -> 10% outliers: bio_lc (filtered) {v['bio_lc']:.4f} -> {v['bio_lc_outliers']:.4f} "
            f"({bio:+.1%}, needs < +25%); plain_transpose (unfiltered) {v['plain_transpose']:.4f} -> "
            f"{v['plain_transpose_outliers']:.4f} ({plain:+.1%}, needs > +100%); filter removed "
            f"{prep.filter_report['translation_breaks']} jumps and {prep.filter_report['orientation_breaks']} flips")
    assert ok


def test_determinism(tmp_path):
    cfg = {"synth": {"n_sequences": 10, "frames": 14, "noise": 0.01, "pose_noise": 0.01, "seed": 4},
           "units": 8, "epochs": 3, "method": "bio_lc_ls_lg", "lambda2": 1.0}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    data = tmp_path / "data.jsonl"
    assert main(["synth", "--config", str(tmp_path / "cfg.json"), "--out", str(data)]) == 0
    outputs = []
    ck = tmp_path / "run"
    for _ in range(2):
        # identical paths each time; the first run's files are snapshotted then removed
        assert main(["train", "--config", str(tmp_path / "cfg.json"), "--dataset", str(data),
                     "--checkpoint-dir", str(ck)]) == 0
        for mode in ("next", "rollout"):
            assert main(["predict", "--config", str(tmp_path / "cfg.json"), "--dataset", str(data),
                         "--checkpoint-dir", str(ck), "--mode", mode, "--horizon", "8", "--split", "all",
                         "--out", str(ck / f"pred_{mode}.jsonl")]) == 0
        files = {p.name: p.read_bytes() for p in sorted(ck.iterdir()) if not p.name.endswith("manifest.json")}
        manifest = json.loads((ck / "bio_lc_ls_lg_manifest.json").read_text())
        manifest.pop("created_at")
        outputs.append((files, manifest))
        shutil.rmtree(ck)
    same = outputs[0] == outputs[1]
    verdict("determinism", same, f"{len(outputs[0][0])} train/predict output files byte-identical across two runs; "
                                 f"manifests equal apart from created_at")
    assert same


def test_checkpoint_round_trip(bench, tmp_path):
    pred = bench.predictor("bio_lc", 0)
    x = np.random.default_rng(9).normal(size=(16, LOOKBACK - 1, 3))
    ok = True
    for part, w in pred.nets.items():
        path = tmp_path / f"{part}.json"
        w.save(path, include_optimizer=True)
        loaded = NetworkWeights.load(path)
        xi = x if part == "trans" else np.random.default_rng(10).normal(size=(16, LOOKBACK - 1, 72))
        ok &= np.array_equal(loaded.predict(xi), w.predict(xi))
        ok &= all(np.array_equal(loaded.params[k], w.params[k]) for k in w.params)
    hist = np.stack([s.states[:LOOKBACK] for s in bench.test])
    reloaded = build_predictor("bio_lc", {p: NetworkWeights.load(tmp_path / f"{p}.json") for p in pred.nets},
                               LOOKBACK)
    ok &= np.array_equal(reloaded.rollout(hist, 6), pred.rollout(hist, 6))
    verdict("checkpoint round-trip", bool(ok), "save -> load -> forward and 6-step rollout bit-identical")
    assert ok
