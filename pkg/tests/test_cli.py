import json
import subprocess
import sys

import pytest

from evora.cli import main
from evora.model import load_model, model_to_dict
from evora.terrain import load_json


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "train"
    assert run("gen-terrain", "--kind", "train", "--count", 2, "--rows", 30, "--cols", 30, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def model_dir(train_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert run("train", "--data", train_dir, "--loss", "uemd2", "--joint-steps", 40, "--flow-steps", 10, "--out", out) == 0
    return out


@pytest.mark.parametrize("cmd", [[], ["gen-terrain"], ["train"], ["eval"], ["bench"]])
def test_help_exits_zero(cmd):
    proc = subprocess.run([sys.executable, "-m", "evora.cli", *cmd, "--help"], capture_output=True)
    assert proc.returncode == 0 and b"usage" in proc.stdout


def test_gen_terrain_writes_manifest_and_is_reproducible(train_dir, tmp_path):
    manifest = json.loads((train_dir / "manifest.json").read_text())
    assert manifest["status"] == "complete" and len(manifest["outputs"]) == 4
    assert load_json(train_dir / "map_000.json")["header"]["manifest_id"] == manifest["manifest_id"]
    first = json.loads((train_dir / "samples_000.jsonl").read_text().splitlines()[0])
    assert first["manifest_id"] == manifest["manifest_id"]
    again = tmp_path / "again"
    run("gen-terrain", "--kind", "train", "--count", 2, "--rows", 30, "--cols", 30, "--out", again)
    for name in manifest["outputs"]:
        assert (again / name).read_bytes() == (train_dir / name).read_bytes()


def test_default_train_count_and_ood2(tmp_path):
    assert run("gen-terrain", "--kind", "train", "--rows", 20, "--cols", 20, "--out", tmp_path / "t") == 0
    assert len(list((tmp_path / "t").glob("map_*.json"))) == 5
    assert run("gen-terrain", "--kind", "ood2", "--count", 2, "--rows", 20, "--cols", 20, "--out", tmp_path / "o") == 0
    for p in (tmp_path / "o").glob("map_*.json"):
        assert all(cell["semantic"] == 0 for cell in load_json(p)["cells"])


def test_seed_environment_override(tmp_path, monkeypatch):
    monkeypatch.setenv("EVORA_SEED", "7")
    run("gen-terrain", "--kind", "test", "--count", 1, "--rows", 20, "--cols", 20, "--out", tmp_path / "a")
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["master_seed"] == 7
    run("gen-terrain", "--kind", "test", "--count", 1, "--rows", 20, "--cols", 20, "--seed", 3, "--out", tmp_path / "b")
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["master_seed"] == 3
    monkeypatch.setenv("EVORA_SEED", "x")
    assert run("gen-terrain", "--out", tmp_path / "c") == 2


def test_train_flag_mapping_and_round_trip(model_dir):
    data = json.loads((model_dir / "model.json").read_text())
    cfg = data["config"]
    assert (cfg["w1"], cfg["w2"], cfg["w3"]) == (0.0, 1.0, 1e-5)
    model = load_model(model_dir / "model.json")
    assert json.dumps(model_to_dict(model)) == json.dumps({k: v for k, v in data.items() if k != "meta"})
    metrics = json.loads((model_dir / "metrics.json").read_text())
    assert metrics["val_emd2"] >= 0 and metrics["manifest_id"] == data["meta"]["manifest_id"]


def test_train_sweep_dry_run_lists_five_seeds(train_dir, capsys):
    assert run("train", "--data", train_dir, "--sweep", "--dry-run") == 0
    assert json.loads(capsys.readouterr().out)["config"]["seeds"] == [0, 1, 2, 3, 4]


def test_eval_metrics(model_dir, tmp_path):
    ood = tmp_path / "ood"
    run("gen-terrain", "--kind", "ood1", "--count", 2, "--rows", 30, "--cols", 30, "--out", ood)
    assert run("eval", "--model", model_dir / "model.json", "--maps", ood, "--out", tmp_path / "e") == 0
    res = json.loads((tmp_path / "e" / "eval.json").read_text())["results"][str(ood)]
    assert res["n_ood_maps"] == 2 and 0 <= res["auc_roc"] <= 1 and res["emd2"] >= 0 and res["kl_floor"] == 1e-12


def test_error_exit_codes(model_dir, tmp_path):
    assert run("train", "--data", tmp_path / "missing", "--out", tmp_path / "m") == 3
    assert run("bench", "--experiment", "nope", "--out", tmp_path / "b") == 2
    (tmp_path / "cfg.json").write_text(json.dumps({"n_bins": 10}))
    run("gen-terrain", "--kind", "ood1", "--count", 1, "--rows", 20, "--cols", 20, "--config", tmp_path / "cfg.json",
        "--out", tmp_path / "b10")
    assert run("eval", "--model", model_dir / "model.json", "--maps", tmp_path / "b10", "--out", tmp_path / "e") == 3
    (tmp_path / "bad.json").write_text("[1, 2]")
    assert run("gen-terrain", "--config", tmp_path / "bad.json", "--out", tmp_path / "x") == 2
    assert run("gen-terrain", "--count", 0, "--out", tmp_path / "x") == 2


def test_bench_dry_run(capsys):
    assert run("bench", "--experiment", "planner", "--veg", 0.7, "--dry-run") == 0
    cfg = json.loads(capsys.readouterr().out)["config"]
    assert cfg["arena"]["veg_density"] == 0.7 and cfg["time_limit"] == 15.0
    assert run("bench", "--experiment", "ood", "--paper-scale", "--dry-run") == 0
    cfg = json.loads(capsys.readouterr().out)["config"]
    assert cfg["n_maps"] == 40 and cfg["time_limit"] == 30.0


def test_bench_runs_and_stamps_outputs(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"n_maps": 1, "n_realizations": 1, "veg_density": 0.0}))
    out = tmp_path / "bench"
    assert run("bench", "--experiment", "penalty", "--config", cfg, "--jobs", 1, "--out", out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"summary.csv", "trials.jsonl", "long.csv"}
    trials = [json.loads(x) for x in (out / "trials.jsonl").read_text().splitlines()]
    assert all(t["manifest_id"] == manifest["manifest_id"] and t["success"] for t in trials)


def test_bench_rerun_from_manifest_is_bitwise(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"n_maps": 2, "n_realizations": 1, "time_limit": 4.0}))
    first, second = tmp_path / "first", tmp_path / "second"
    assert run("bench", "--experiment", "planner", "--config", cfg, "--jobs", 1, "--out", first) == 0
    assert run("bench", "--manifest", first / "manifest.json", "--jobs", 2, "--out", second) == 0
    for name in ("summary.csv", "trials.jsonl", "long.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert run("bench", "--manifest", tmp_path / "bench.json", "--out", tmp_path / "x") == 2
