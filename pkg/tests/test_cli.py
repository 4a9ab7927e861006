import json
import subprocess
import sys

import numpy as np
import pytest

from hoirefine.cli import main
from hoirefine.metrics import METRIC_KEYS
from hoirefine.model import ModelConfig, init_params, save_checkpoint

SMALL = ["--descriptor-dim", "8", "--hidden", "8", "--att-dim", "4"]


def files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["synth", "--count", "2", "--seed", "1", "--out", str(out)]) == 0
    return out


def train_run(scenes, out, *extra):
    return main(["train", "--scenes", str(scenes), "--out", str(out), "--epochs", "3", *SMALL, *extra])


# ------------------------------------------------------------------ synth


def test_synth_layout_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--count", "5", "--seed", "1", "--out", str(a)]) == 0
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 1 and len(manifest["scenes"]) == 5
    for entry in manifest["scenes"]:
        assert (a / entry["dir"] / "hand_init.obj").is_file()
    assert main(["synth", "--count", "5", "--seed", "1", "--out", str(b), "--threads", "2"]) == 0
    assert files(a) == files(b)


def test_synth_count_zero(tmp_path, capsys):
    assert main(["synth", "--count", "0", "--out", str(tmp_path)]) != 0
    assert "count must be ≥ 1" in capsys.readouterr().err


def test_synth_negative_noise(tmp_path, capsys):
    assert main(["synth", "--count", "1", "--vertex-sigma", "-1", "--out", str(tmp_path)]) == 2
    assert "vertex_sigma" in capsys.readouterr().err


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"count": 3, "seed": 9, "vertex_sigma": 0.0, "translation": 0.0}))
    assert main(["synth", "--config", str(cfg), "--count", "1", "--out", str(tmp_path / "s")]) == 0
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["count"] == 1 and manifest["seed"] == 9 and manifest["noise"]["translation"] == 0.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": 1}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "t")]) == 2


# ------------------------------------------------------------------ train / eval


def test_train_outputs(scenes, tmp_path):
    out = tmp_path / "run"
    assert train_run(scenes, out) == 0
    rows = (out / "loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,loss_total,loss_hand,loss_obj" and len(rows) == 4
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) >= {"initial", "refine", "seed"}
    for block in ("initial", "refine"):
        recs = metrics[block]["scenes"]
        assert len(recs) == 2
        for key in METRIC_KEYS:
            assert metrics[block]["mean"][key] == pytest.approx(np.mean([r[key] for r in recs]), rel=1e-12)
    assert (out / "checkpoint.json").is_file()


def test_train_rerun_and_threads_identical(scenes, tmp_path):
    assert train_run(scenes, tmp_path / "a") == 0
    assert train_run(scenes, tmp_path / "b", "--threads", "2") == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


@pytest.mark.parametrize("flags, family", [(["--no-ec"], "common"), (["--no-ea"], "attention")])
def test_ablation_origins(scenes, tmp_path, flags, family):
    assert train_run(scenes, tmp_path, *flags) == 0
    graphs = json.loads((tmp_path / "graphs.json").read_text())
    for summary in graphs.values():
        assert all(e[family] == 0 for e in summary["edges"].values())


def test_ablation_both_off(scenes, tmp_path):
    assert train_run(scenes, tmp_path, "--no-ec", "--no-ea") == 0
    graphs = json.loads((tmp_path / "graphs.json").read_text())
    for summary in graphs.values():
        assert summary["edges"]["ho"]["total"] == summary["edges"]["oh"]["total"] == 0


def test_eval_zero_displacement(scenes, tmp_path):
    cfg = ModelConfig(descriptor_dim=8, hidden=8, att_dim=4)
    save_checkpoint(tmp_path / "zero.json", init_params(cfg, np.random.default_rng(0)), cfg)
    assert main(["eval", "--scenes", str(scenes), "--checkpoint", str(tmp_path / "zero.json"),
                 "--out", str(tmp_path / "ev"), "--export-meshes"]) == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert [dict(r) for r in metrics["initial"]["scenes"]] == [dict(r) for r in metrics["refine"]["scenes"]]
    assert (tmp_path / "ev" / "meshes" / "scene_000" / "hand_refined.obj").is_file()


def test_eval_after_train_matches(scenes, tmp_path):
    assert train_run(scenes, tmp_path / "t") == 0
    assert main(["eval", "--scenes", str(scenes), "--checkpoint", str(tmp_path / "t" / "checkpoint.json"),
                 "--out", str(tmp_path / "e")]) == 0
    a = json.loads((tmp_path / "t" / "metrics.json").read_text())
    b = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert a == b


def test_eval_shape_mismatch(scenes, tmp_path, capsys):
    cfg = ModelConfig(descriptor_dim=8, hidden=8, att_dim=4)
    values = init_params(cfg, np.random.default_rng(0))
    values["att.ho.Wk"] = values["att.ho.Wk"][:, :2]
    save_checkpoint(tmp_path / "bad.json", values, cfg)
    assert main(["eval", "--scenes", str(scenes), "--checkpoint", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path / "ev")]) != 0
    assert "att.ho.Wk" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exits_nonzero(scenes, tmp_path, capsys):
    assert train_run(scenes, tmp_path, "--lr", "1e300") == 3
    assert "diverged" in capsys.readouterr().err
    assert not (tmp_path / "checkpoint.json").exists()


def test_train_rejects_nan_lr(scenes, tmp_path, capsys):
    assert main(["train", "--scenes", str(scenes), "--out", str(tmp_path), "--lr", "nan"]) == 2
    assert "lr" in capsys.readouterr().err


def test_missing_manifest(tmp_path, capsys):
    assert main(["train", "--scenes", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert "manifest" in capsys.readouterr().err


# ------------------------------------------------------------------ gradcheck


def test_gradcheck_cli(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    first = capsys.readouterr().out
    assert "PASS" in first
    assert main(["gradcheck", "--seed", "0"]) == 0
    assert capsys.readouterr().out == first


def test_gradcheck_corrupted(capsys):
    assert main(["gradcheck", "--corrupt", "softmax_rows"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "hoirefine", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gradcheck" in r.stdout
