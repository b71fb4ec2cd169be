import json

import numpy as np
import pytest

from biolstm.body_model import default_model, read_obj_vertices
from biolstm.cli import load_config, main
from biolstm.errors import ConfigInvalid


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = {"synth": {"n_sequences": 12, "frames": 12, "noise": 0.01, "pose_noise": 0.01},
           "units": 4, "epochs": 2, "batch_size": 32, "checkpoint_dir": str(d / "ckpt"), "out_dir": str(d / "out")}
    (d / "cfg.json").write_text(json.dumps(cfg))
    assert run("synth", "--config", d / "cfg.json", "--out", d / "data.jsonl", "--truth-out", d / "truth.jsonl") == 0
    return d


def test_synth_record_count_and_rerun(workspace, tmp_path, capsys):
    lines = (workspace / "data.jsonl").read_text().splitlines()
    assert len(lines) == 12 * 12
    assert run("synth", "--config", workspace / "cfg.json", "--out", tmp_path / "again.jsonl") == 0
    assert (tmp_path / "again.jsonl").read_bytes() == (workspace / "data.jsonl").read_bytes()
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["records"] == 144


def test_bad_inputs_exit_codes(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "x.jsonl", "--period", 1) == 2
    assert run("train", "--dataset", tmp_path / "missing.jsonl") == 3
    (tmp_path / "cfg.json").write_text(json.dumps({"lookbak": 5}))
    assert run("train", "--config", tmp_path / "cfg.json", "--dataset", tmp_path / "x.jsonl") == 2
    assert "lookbak" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"lookback": 4, "epochs": 7}))
    cfg = load_config(str(tmp_path / "c.json"), {"epochs": 3, "units": None})
    assert (cfg.lookback, cfg.epochs, cfg.units) == (4, 3, 32)
    with pytest.raises(ConfigInvalid):
        load_config(None, {"method": "nonsense"})


def test_too_few_sequences(workspace, tmp_path):
    rows = (workspace / "data.jsonl").read_text().splitlines()
    (tmp_path / "two.jsonl").write_text("\n".join(rows[:24]) + "\n")
    assert run("stats", "--dataset", tmp_path / "two.jsonl", "--out-dir", tmp_path) == 5


def train_and_predict(workspace, tag, method="bio_lc_ls_lg", mode="next"):
    ckpt = workspace / f"ckpt_{tag}"
    assert run("train", "--config", workspace / "cfg.json", "--dataset", workspace / "data.jsonl",
               "--checkpoint-dir", ckpt, "--method", method) == 0
    out = workspace / f"pred_{tag}.jsonl"
    assert run("predict", "--config", workspace / "cfg.json", "--dataset", workspace / "data.jsonl",
               "--checkpoint-dir", ckpt, "--method", method, "--mode", mode, "--horizon", 6,
               "--split", "all", "--out", out) == 0
    return ckpt, out


def test_train_predict_byte_reproducible(workspace):
    ck1, p1 = train_and_predict(workspace, "a")
    ck2, p2 = train_and_predict(workspace, "b")
    for name in ("bio_lc_ls_lg_trans.json", "bio_lc_ls_lg_pose.json", "bio_lc_ls_lg_stats.json"):
        assert (ck1 / name).read_bytes() == (ck2 / name).read_bytes()
    assert p1.read_bytes() == p2.read_bytes()
    rows = [json.loads(x) for x in p1.read_text().splitlines()]
    assert len(rows) == 12 * (12 - 5)
    assert all(len(r["pose"]) == 72 and len(r["trans"]) == 3 for r in rows)


def test_rollout_prefix_through_cli(workspace):
    _, p = train_and_predict(workspace, "r", method="bio_lc", mode="rollout")
    rows = [json.loads(x) for x in p.read_text().splitlines()]
    assert len(rows) == 12 * 6
    nxt = workspace / "next_from_start.jsonl"
    # next-frame prediction on a 5-frame prefix equals rollout step 1
    assert run("predict", "--config", workspace / "cfg.json", "--dataset", workspace / "data.jsonl",
               "--checkpoint-dir", workspace / "ckpt_r", "--method", "bio_lc", "--split", "all",
               "--out", nxt) == 0
    first = {(r["seq_id"], r["frame_idx"]): r for r in map(json.loads, nxt.read_text().splitlines())}
    for r in rows:
        if r["horizon_step"] == 1:
            # batch sizes differ between the two modes, so allow matmul rounding
            assert np.allclose(first[(r["seq_id"], r["frame_idx"])]["trans"], r["trans"], rtol=0, atol=1e-12)


def test_eval_writes_reports(workspace):
    _, _ = train_and_predict(workspace, "e", method="bio_lc")
    out = workspace / "eval"
    assert run("eval", "--config", workspace / "cfg.json", "--dataset", workspace / "data.jsonl",
               "--truth", workspace / "truth.jsonl", "--checkpoint-dir", workspace / "ckpt_e",
               "--methods", "bio_lc,frame_diff", "--rollout", 0, "--ground-audit", "--out-dir", out) == 0
    for name in ("next_frame.csv", "per_action.csv", "horizon_curves.csv", "summary.json", "ground_audit.csv"):
        assert (out / name).exists()
    manifest = json.loads((out / "eval_manifest.json").read_text())
    assert set(manifest["outputs"]) >= {"table", "summary"}


def test_export_rest_mesh(tmp_path):
    assert run("export-mesh", "--rest", "--out", tmp_path / "rest.obj") == 0
    rest = default_model(with_mesh=True).mesh.rest_vertices
    assert np.allclose(read_obj_vertices(tmp_path / "rest.obj"), rest, atol=1e-6)
