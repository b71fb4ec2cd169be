import json
import math

import numpy as np
import pytest

from biolstm.data import PoseSequence, compute_stats, window
from biolstm.errors import ChkptMismatch, ConfigInvalid, DimensionMismatch, EmptySplit, StaleCache
from biolstm.network import (
    AdamState,
    NetworkConfig,
    NetworkWeights,
    adam_step,
    backward,
    forward,
    init_params,
    train,
    zero_params,
)
from biolstm.objective import LossWeights
from biolstm.training import DiffTask
from helpers import naive_lstm, random_params


def test_zero_network_outputs_zero(rng):
    params = zero_params(NetworkConfig(input_dim=3, lookback=5))
    y, _ = forward(params, rng.normal(size=(4, 4, 3)))
    assert np.array_equal(y, np.zeros((4, 3)))


def test_single_unit_hand_case():
    big, bg = 50.0, 0.7
    params = {"W0": np.zeros((4, 2)), "b0": np.array([big, big, bg, big]),
              "Wd": np.ones((1, 1)), "bd": np.zeros(1)}
    g = math.tanh(bg)
    # with i = f = o = 1: c1 = g, c2 = 2g; h = tanh(c)
    y1, _ = forward(params, np.zeros((1, 1, 1)))
    y2, _ = forward(params, np.zeros((1, 2, 1)))
    assert y1[0, 0] == pytest.approx(math.tanh(g), abs=1e-12)
    assert y2[0, 0] == pytest.approx(math.tanh(2 * g), abs=1e-12)


def test_matches_naive_recurrence(rng):
    worst = 0.0
    for _ in range(10):
        q = int(rng.choice([3, 5]))
        params = random_params(rng, q, units=int(rng.integers(1, 6)))
        x = rng.normal(size=(3, 4, q))
        y, _ = forward(params, x)
        for n in range(3):
            worst = max(worst, np.abs(y[n] - naive_lstm(params, x[n])).max())
    assert worst <= 1e-12


def test_input_dimension_checked(rng):
    params = init_params(NetworkConfig(input_dim=3), rng)
    with pytest.raises(DimensionMismatch):
        forward(params, np.zeros((1, 4, 5)))


def test_bptt_finite_differences(rng):
    params = random_params(rng, 3, units=4)
    x = rng.normal(size=(2, 2, 3))      # l = 3 -> 2 input steps
    w = rng.normal(size=(2, 3))

    def f(p, xx=x):
        return float(np.sum(w * forward(p, xx)[0]))

    _, cache = forward(params, x)
    grads = backward(params, cache, w)
    h = 1e-5
    for key, p in params.items():
        for idx in np.ndindex(p.shape):
            p1 = {k: v.copy() for k, v in params.items()}
            p2 = {k: v.copy() for k, v in params.items()}
            p1[key][idx] += h
            p2[key][idx] -= h
            fd = (f(p1) - f(p2)) / (2 * h)
            assert abs(grads[key][idx] - fd) <= 1e-4 * max(abs(fd), 1e-4), (key, idx)
    for idx in np.ndindex(x.shape):
        x1, x2 = x.copy(), x.copy()
        x1[idx] += h
        x2[idx] -= h
        fd = (f(params, x1) - f(params, x2)) / (2 * h)
        assert abs(grads["x"][idx] - fd) <= 1e-4 * max(abs(fd), 1e-4)


def test_zero_upstream_and_dead_input(rng):
    params = random_params(rng, 3, units=4)
    x = rng.normal(size=(2, 3, 3))
    _, cache = forward(params, x)
    grads = backward(params, cache, np.zeros((2, 3)))
    assert all(not np.any(g) for g in grads.values())
    # the loss reads output 0 only, so head row 1 and 2 get no gradient
    dy = np.zeros((2, 3))
    dy[:, 0] = 1.0
    grads = backward(params, cache, dy)
    assert not np.any(grads["Wd"][1:]) and not np.any(grads["bd"][1:])


def test_stale_cache(rng):
    params = random_params(rng, 3, units=4)
    _, cache = forward(params, rng.normal(size=(2, 3, 3)))
    with pytest.raises(StaleCache):
        backward(params, cache, np.zeros((5, 3)))


def test_adam_first_step():
    p = {"w": np.array([0.5])}
    new, state = adam_step(p, {"w": np.array([1.0])}, AdamState())
    assert new["w"][0] - 0.5 == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-15)
    assert new["w"][0] - 0.5 == pytest.approx(-9.99999995e-4, rel=1e-6)
    assert state.t == 1


def test_adam_two_steps_and_zero_gradient():
    b1, b2, lr, eps, g = 0.9, 0.999, 1e-3, 1e-8, 0.3
    p = {"w": np.array([1.0])}
    state = AdamState()
    w, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        p, state = adam_step(p, {"w": np.array([g])}, state)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        assert p["w"][0] == pytest.approx(w, abs=1e-15)
    frozen, _ = adam_step({"w": np.array([2.0])}, {"w": np.array([0.0])}, AdamState())
    assert frozen["w"][0] == 2.0


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        NetworkConfig(input_dim=3, lookback=1)
    with pytest.raises(ConfigInvalid):
        NetworkConfig(input_dim=3, units=0)
    assert NetworkConfig(input_dim=72).output_dim == 72


def walker(k, frames=16, step=(0.05, 0.2, 0.0)):
    t = np.arange(frames)
    trans = np.outer(t, step) + [k, 0.0, 0.9]
    return PoseSequence(f"w{k}", "0", t, t / 6.0, trans, np.zeros((frames, 72)),
                        np.zeros((frames, 10)), np.zeros(frames), "walk")


@pytest.fixture(scope="module")
def walker_run(bare_model):
    seqs = [walker(k) for k in range(6)]
    stats = compute_stats(seqs[:4], bare_model)
    tw, vw = window(seqs[:4], 5), window(seqs[4:], 5)
    weights = LossWeights(0.0, 0.0)
    cfg = NetworkConfig(input_dim=3, units=8, lookback=5, lr=3e-3, epochs=50, batch_size=4, seed=3)
    run = lambda: train(cfg, DiffTask(tw, "trans", stats, bare_model, weights),
                        DiffTask(vw, "trans", stats, bare_model, weights), stats.to_dict())
    return run, run()


def test_constant_velocity_walker_converges(walker_run):
    _, result = walker_run
    assert len(result.curves) == 50
    assert min(r["val_L_c"] for r in result.curves) < 1e-3
    assert result.weights.meta["best_epoch"] == result.best_epoch


def test_training_is_deterministic(walker_run):
    run, first = walker_run
    second = run()
    assert json.dumps(first.weights.to_dict()) == json.dumps(second.weights.to_dict())


def test_checkpoint_round_trip(walker_run, tmp_path, rng):
    w = walker_run[1].weights
    path = tmp_path / "net.json"
    w.save(path, include_optimizer=True)
    loaded = NetworkWeights.load(path)
    x = rng.normal(size=(7, 4, 3))
    assert np.array_equal(loaded.predict(x), w.predict(x))
    assert loaded.optimizer.t == w.optimizer.t
    assert path.read_text() == json.dumps(loaded.to_dict(include_optimizer=True), sort_keys=True)


def test_bad_checkpoint(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format": "other/9"}))
    with pytest.raises(ChkptMismatch):
        NetworkWeights.load(path)
    path.write_text("{not json")
    with pytest.raises(ChkptMismatch):
        NetworkWeights.load(path)


def test_empty_split(bare_model):
    seqs = [walker(k) for k in range(2)]
    stats = compute_stats(seqs, bare_model)
    task = DiffTask(window(seqs, 5), "trans", stats, bare_model, LossWeights(0, 0))
    empty = DiffTask(window([], 5), "trans", stats, bare_model, LossWeights(0, 0))
    with pytest.raises(EmptySplit):
        train(NetworkConfig(input_dim=3, epochs=1), task, empty)
