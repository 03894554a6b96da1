import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from stbeamsnet import cli, io

TINY_CONFIG = {
    "missions": 3,
    "duration": 60,
    "seed": 5,
    "hyperparams": {"alpha": 2, "beta": 1, "gamma": 1, "D": 8, "h": 2, "ffe": 8, "b": 1, "k": 2},
    "head_width": 8,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "sim.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    data = root / "data"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    ck = root / "train" / "checkpoint.npz"
    assert cli.main(["train", str(data / "dataset.json"), "--epochs", "2", "--lr", "0.01", "--out", str(ck)]) == 0
    assert cli.main(["evaluate", str(data / "dataset.json"), "--checkpoint", str(ck), "--out", str(root / "eval")]) == 0
    return root


def test_simulate_defaults_layout(tmp_path):
    # full-size layout check on 2 short missions keeps runtime low
    assert cli.main(["simulate", "--missions", "2", "--duration", "60", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "dataset.json").read_text())
    assert len(doc["missions"]) == 2
    assert [m["split"] for m in doc["missions"]].count("test") == 1
    for m in doc["missions"]:
        for f in ("imu.csv", "dvl.csv", "truth.csv", "config.json"):
            assert (tmp_path / m["dir"] / f).exists()
    assert doc["hyperparams"]["D"] == 128
    assert json.loads((tmp_path / "simulate_config.json").read_text())["missions"] == 2


def test_simulate_default_mission_count(tmp_path):
    parser = cli.build_parser()
    args = parser.parse_args(["simulate", "--out", str(tmp_path)])
    assert args.missions is None  # falls back to 9 in cmd_simulate
    assert cli.main(["simulate", "--duration", "60", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "dataset.json").read_text())
    assert len(doc["missions"]) == 9
    assert sum(m["split"] == "test" for m in doc["missions"]) == 1


def test_simulate_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert cli.main(["simulate", "--missions", "2", "--duration", "60", "--seed", "3",
                         "--out", str(tmp_path / sub)]) == 0
    a = json.loads((tmp_path / "a" / "dataset.json").read_text())
    b = json.loads((tmp_path / "b" / "dataset.json").read_text())
    assert [m["sha256"] for m in a["missions"]] == [m["sha256"] for m in b["missions"]]


def test_simulate_rejects_single_mission(tmp_path):
    assert cli.main(["simulate", "--missions", "1", "--duration", "60", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_train_artifacts(workspace):
    rows = list(csv.reader(open(workspace / "train" / "loss_history.csv")))
    assert rows[0] == ["epoch", "train_mse", "val_mse"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    cfg = json.loads((workspace / "train" / "train_config.json").read_text())
    assert cfg["train_config"]["epochs"] == 2 and cfg["train_config"]["learning_rate"] == 0.01


def test_train_resume_continues_numbering(workspace, tmp_path):
    out = tmp_path / "resumed.npz"
    ck = workspace / "train" / "checkpoint.npz"
    assert cli.main(["train", str(workspace / "data" / "dataset.json"), "--epochs", "1", "--lr", "0.01",
                     "--resume", str(ck), "--out", str(out)]) == 0
    rows = list(csv.reader(open(tmp_path / "loss_history.csv")))
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]


def test_evaluate_outputs(workspace):
    ev = workspace / "eval"
    metrics = json.loads((ev / "metrics.json").read_text())
    cli.jsonschema.validate(metrics, cli.METRICS_SCHEMA)
    assert metrics["st_beamsnet"]["sample_count"] == metrics["moving_average"]["sample_count"] == 15
    assert metrics["seeds"]["root_seed"] == 5
    assert metrics["config"]["train_config"]["epochs"] == 2
    rows = list(csv.reader(open(ev / "error_density.csv")))
    assert rows[0] == ["bin_center", "st_probability", "ma_probability"]
    assert sum(float(r[2]) for r in rows[1:]) == pytest.approx(1.0, abs=1e-8)


def test_ma_column_spot_check(workspace):
    doc = io.read_manifest(workspace / "data" / "dataset.json")
    (entry, directory), = io.manifest_missions(doc, "test")
    mission = io.read_mission(directory)
    rows = list(csv.DictReader(open(workspace / "eval" / "predictions.csv")))
    row = rows[5]
    t = float(row["t"])
    j = int(round(t)) - 1
    prior = [k for k in range(j) if mission.dvl.valid[k]][-3:]
    for axis, col in enumerate("xyz"):
        hand = (mission.dvl.velocity[prior[0], axis] + mission.dvl.velocity[prior[1], axis]
                + mission.dvl.velocity[prior[2], axis]) / 3
        assert float(row[f"ma_{col}"]) == pytest.approx(hand, abs=1e-8)
    assert row["mission"] == entry["name"]


def test_evaluate_rerun_identical(workspace, tmp_path):
    ck = workspace / "train" / "checkpoint.npz"
    assert cli.main(["evaluate", str(workspace / "data" / "dataset.json"), "--checkpoint", str(ck),
                     "--out", str(tmp_path)]) == 0
    for f in ("metrics.json", "predictions.csv", "error_density.csv"):
        assert (tmp_path / f).read_bytes() == (workspace / "eval" / f).read_bytes()


def test_compare_recomputes(workspace, tmp_path):
    assert cli.main(["compare", str(workspace / "eval" / "predictions.csv"), "--out", str(tmp_path)]) == 0
    a = json.loads((tmp_path / "metrics.json").read_text())
    b = json.loads((workspace / "eval" / "metrics.json").read_text())
    assert a["st_beamsnet"]["rmse"] == pytest.approx(b["st_beamsnet"]["rmse"], rel=1e-6)
    assert a["rmse_improvement_pct"] == pytest.approx(b["rmse_improvement_pct"], rel=1e-5, abs=1e-6)


def test_evaluate_rejects_incompatible_checkpoint(workspace, tmp_path):
    data = tmp_path / "data"
    assert cli.main(["simulate", "--missions", "2", "--duration", "60", "--out", str(data)]) == 0
    code = cli.main(["evaluate", str(data / "dataset.json"), "--checkpoint",
                     str(workspace / "train" / "checkpoint.npz"), "--out", str(tmp_path / "e")])
    assert code == cli.EXIT_COMPAT


def test_evaluate_detects_modified_test_mission(workspace, tmp_path):
    import shutil

    data = tmp_path / "data"
    shutil.copytree(workspace / "data", data)
    doc = io.read_manifest(data / "dataset.json")
    (_, directory), = io.manifest_missions(doc, "test")
    with open(directory / "truth.csv", "a") as fh:
        fh.write("999,0,0,0\n")
    code = cli.main(["evaluate", str(data / "dataset.json"), "--checkpoint",
                     str(workspace / "train" / "checkpoint.npz"), "--out", str(tmp_path / "e")])
    assert code == cli.EXIT_COMPAT


def test_missing_manifest_is_io_error(tmp_path):
    assert cli.main(["train", str(tmp_path / "nope.json")]) == cli.EXIT_IO


def test_bad_config_value(workspace, tmp_path):
    code = cli.main(["train", str(workspace / "data" / "dataset.json"), "--epochs", "1",
                     "--precision", "float64", "--batch-size", "0", "--out", str(tmp_path / "c.npz")])
    assert code == cli.EXIT_CONFIG


def test_module_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "stbeamsnet", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("simulate", "train", "evaluate", "compare"):
        assert cmd in out.stdout
