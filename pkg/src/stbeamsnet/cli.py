"""Command-line front end: simulate -> train -> evaluate (-> compare).

Settings come from an optional JSON ``--config`` file; explicit flags override
it; the merged configuration is written next to every run's outputs. Log
verbosity is read from ``STBEAMSNET_LOG`` (e.g. ``DEBUG``, ``INFO``).

Exit codes: 0 success, 1 I/O failure, 2 invalid arguments or configuration,
3 training diverged, 4 checkpoint/manifest incompatibility, 5 artifact failed
schema validation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import evaluation, io, sim
from .blocks import Hyperparams
from .errors import CompatibilityError, ConfigurationError, TrainingFailure
from .model import DEFAULT_HEAD_WIDTH, Predictions, StBeamsNet, TrainConfig, load_training, predict_outages, save_training, train

log = logging.getLogger("stbeamsnet")

EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED, EXIT_COMPAT, EXIT_SCHEMA = 1, 2, 3, 4, 5

_REPORT = {
    "type": "object",
    "required": ["rmse", "rmse_pct", "mae", "mae_pct", "r2", "vaf", "mean_truth_norm", "sample_count"],
    "properties": {k: {"type": "number"} for k in ("rmse", "rmse_pct", "mae", "mae_pct", "r2", "vaf", "mean_truth_norm")}
    | {"sample_count": {"type": "integer", "minimum": 2}},
}
METRICS_SCHEMA = {
    "type": "object",
    "required": ["st_beamsnet", "moving_average", "rmse_improvement_pct", "config", "seeds"],
    "properties": {"st_beamsnet": _REPORT, "moving_average": _REPORT, "rmse_improvement_pct": {"type": "number"}},
}
MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["format_version", "root_seed", "n_history", "val_fraction", "missions", "hyperparams", "head_width"],
    "properties": {
        "missions": {
            "type": "array",
            "minItems": 2,
            "items": {"type": "object", "required": ["name", "dir", "seed", "split", "sha256"]},
        }
    },
}


class ArtifactError(RuntimeError):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def _merge(file_cfg: dict, **flags) -> dict:
    out = dict(file_cfg)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _check_csv_header(path: Path, expected: list[str]) -> None:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header != expected:
        raise ArtifactError(f"{path}: header {header} != {expected}")


# --- simulate --------------------------------------------------------------


def _simulate_one(args: tuple[dict, str, str]) -> str:
    config_dict, name, directory = args
    mission = sim.simulate_mission(sim.MissionConfig.from_dict(config_dict), name=name)
    io.write_mission(directory, mission)
    return io.mission_hash(directory)


def cmd_simulate(args) -> int:
    cfg = _merge(_load_config(args.config), missions=args.missions, duration=args.duration, seed=args.seed,
                 workers=args.workers)
    cfg.setdefault("missions", 9)
    cfg.setdefault("seed", 0)
    cfg.setdefault("n_history", 3)
    cfg.setdefault("val_fraction", 0.1)
    cfg.setdefault("workers", 1)
    cfg.setdefault("hyperparams", Hyperparams().to_dict())
    cfg.setdefault("head_width", DEFAULT_HEAD_WIDTH)
    mission_cfg = dict(cfg.get("mission", {}))
    if "duration" in cfg:
        mission_cfg["duration"] = cfg["duration"]
    base = sim.MissionConfig.from_dict(mission_cfg)
    cfg["mission"] = base.to_dict()
    Hyperparams(**cfg["hyperparams"])
    n = int(cfg["missions"])
    if n < 2:
        raise ConfigurationError("need at least 2 missions")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = sim.mission_seeds(cfg["seed"], n)
    test_idx = sim.choose_test_mission(n, cfg["seed"])
    jobs = [(replace(base, seed=s).to_dict(), f"mission_{i:02d}", str(out / f"mission_{i:02d}"))
            for i, s in enumerate(seeds)]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            hashes = list(pool.map(_simulate_one, jobs))
    else:
        hashes = [_simulate_one(j) for j in jobs]
    missions = [
        {"name": name, "dir": name, "seed": s, "split": "test" if i == test_idx else "train", "sha256": h}
        for i, ((_, name, _), s, h) in enumerate(zip(jobs, seeds, hashes))
    ]
    manifest = io.write_manifest(out / "dataset.json", missions, cfg["seed"], cfg["n_history"], cfg["val_fraction"],
                                 hyperparams=cfg["hyperparams"], head_width=cfg["head_width"])
    jsonschema.validate(json.loads(manifest.read_text()), MANIFEST_SCHEMA)
    _write_json(out / "simulate_config.json", cfg)
    log.info("wrote %d missions (test: %s) to %s", n, missions[test_idx]["name"], out)
    print(manifest)
    return 0


# --- train -----------------------------------------------------------------


def _train_config(cfg: dict) -> TrainConfig:
    keys = TrainConfig.__dataclass_fields__
    return TrainConfig(**{k: v for k, v in cfg.items() if k in keys})


def cmd_train(args) -> int:
    doc = io.read_manifest(args.manifest)
    cfg = _merge(_load_config(args.config), epochs=args.epochs, learning_rate=args.lr, seed=args.seed,
                 batch_size=args.batch_size, patience=args.patience, precision=args.precision)
    cfg.setdefault("seed", doc["root_seed"])
    config = _train_config(cfg)
    hp = Hyperparams(**doc["hyperparams"])
    out = Path(args.out) if args.out else Path(doc["_root"]) / "checkpoint.npz"
    out.parent.mkdir(parents=True, exist_ok=True)

    train_entries = io.manifest_missions(doc, "train")
    missions = [io.read_mission(d) for _, d in train_entries]
    train_set, val_set = sim.split_train_val(missions, doc["n_history"], doc["root_seed"], doc["val_fraction"])
    log.info("train samples %d, val samples %d", len(train_set), len(val_set))

    resume = load_training(args.resume, config) if args.resume else None
    if resume is not None and resume.model.hp != hp:
        raise CompatibilityError("resume checkpoint hyper-parameters differ from the manifest")
    result = train(train_set, val_set, config, hp, doc["head_width"], resume=resume)

    meta = {
        "train_missions": {m["name"]: m["sha256"] for m, _ in train_entries},
        "manifest_root_seed": doc["root_seed"],
    }
    save_training(result, out, config, meta)
    history_path = out.parent / "loss_history.csv"
    with open(history_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, tr, va in result.history:
            w.writerow([epoch, f"{tr:.9g}", f"{va:.9g}"])
    _check_csv_header(history_path, ["epoch", "train_mse", "val_mse"])
    _write_json(out.parent / "train_config.json",
                {"train_config": config.to_dict(), "hyperparams": hp.to_dict(), "head_width": doc["head_width"],
                 "manifest": str(Path(args.manifest)), "resumed_from": args.resume,
                 "best_epoch": result.best_epoch, "best_val_mse": result.best_val_mse,
                 "initial_val_mse": result.initial_val_mse})
    log.info("best epoch %d, val_mse %.6g", result.best_epoch, result.best_val_mse)
    print(out)
    return 0


# --- evaluate / compare ----------------------------------------------------


def _ma_predictions(samples: sim.Samples, n: int) -> Predictions:
    return Predictions(samples.t.copy(), samples.mission.copy(), samples.target.copy(),
                       evaluation.moving_average(samples.dvl, n))


def _write_reports(out: Path, st: Predictions, ma: Predictions, bins, context: dict) -> None:
    comparison = evaluation.compare_methods(st, ma)
    density = evaluation.error_density({"st": evaluation.norm_errors(st), "ma": evaluation.norm_errors(ma)}, bins)
    metrics = evaluation.write_metrics_json(out / "metrics.json", comparison, density, **context)
    evaluation.write_error_density_csv(out / "error_density.csv", density)
    jsonschema.validate(json.loads(metrics.read_text()), METRICS_SCHEMA)
    _check_csv_header(out / "error_density.csv", ["bin_center", "st_probability", "ma_probability"])
    st_r, ma_r = comparison.model, comparison.baseline
    print(f"{'metric':<10}{'ST-BeamsNet':>14}{'MA':>14}")
    for key in ("rmse", "rmse_pct", "mae", "mae_pct", "r2", "vaf"):
        print(f"{key:<10}{getattr(st_r, key):>14.4f}{getattr(ma_r, key):>14.4f}")
    print(f"RMSE improvement: {comparison.improvement_pct:.2f}%")


def _bins(value: str | None):
    if value is None:
        return "fd"
    return int(value) if value.isdigit() else value


def cmd_evaluate(args) -> int:
    doc = io.read_manifest(args.manifest)
    model, meta, _ = StBeamsNet.load(args.checkpoint)
    hp = Hyperparams(**doc["hyperparams"])
    if model.hp != hp or model.head_width != doc["head_width"]:
        raise CompatibilityError(f"checkpoint {model.hp}/{model.head_width} does not match manifest {hp}/{doc['head_width']}")
    (entry, directory), = io.manifest_missions(doc, "test")
    test_hash = io.mission_hash(directory)
    if test_hash != entry["sha256"]:
        raise CompatibilityError(f"test mission {entry['name']} changed since the manifest was written")
    if test_hash in meta.get("train_missions", {}).values():
        raise CompatibilityError("test mission was part of the training set")

    mission = io.read_mission(directory)
    n = doc["n_history"]
    st = predict_outages(mission, model, n)
    samples = sim.outage_samples(mission, n)
    ma = _ma_predictions(samples, n)

    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_predictions_csv(out / "predictions.csv", st, ma)
    context = {
        "config": {"hyperparams": hp.to_dict(), "head_width": doc["head_width"],
                   "train_config": meta.get("train_config"), "n_history": n,
                   "mission": mission.config.to_dict(), "bins": args.bins or "fd"},
        "seeds": {"root_seed": doc["root_seed"], "test_mission_seed": entry["seed"],
                  "train_seed": (meta.get("train_config") or {}).get("seed")},
        "test_mission": entry["name"],
        "checkpoint_best_epoch": meta.get("best_epoch"),
    }
    _write_reports(out, st, ma, _bins(args.bins), context)
    _write_json(out / "eval_config.json", {"manifest": str(Path(args.manifest)),
                                           "checkpoint": str(Path(args.checkpoint)), **context})
    return 0


def read_predictions_csv(path) -> tuple[Predictions, Predictions]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["t"]) for r in rows])
    mission = np.array([r["mission"] for r in rows], dtype=object)

    def cols(prefix):
        return np.array([[float(r[f"{prefix}_{a}"]) for a in "xyz"] for r in rows]).reshape(-1, 3)

    truth = cols("truth")
    return Predictions(t, mission, truth, cols("st")), Predictions(t.copy(), mission.copy(), truth.copy(), cols("ma"))


def cmd_compare(args) -> int:
    st, ma = read_predictions_csv(args.predictions)
    out = Path(args.out) if args.out else Path(args.predictions).parent
    out.mkdir(parents=True, exist_ok=True)
    context = {"config": {"predictions": str(Path(args.predictions)), "bins": args.bins or "fd"},
               "seeds": {}}
    _write_reports(out, st, ma, _bins(args.bins), context)
    return 0


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stbeamsnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic missions and a dataset manifest")
    s.add_argument("--config")
    s.add_argument("--missions", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--seed", type=int, help="root seed")
    s.add_argument("--workers", type=int, help="parallel processes (default 1)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train ST-BeamsNet on a manifest's training missions")
    t.add_argument("manifest")
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--precision", choices=["float32", "float64"])
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", help="checkpoint path (default: <manifest dir>/checkpoint.npz)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="compare ST-BeamsNet and moving average on the test mission")
    e.add_argument("manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    e.add_argument("--bins", help="histogram bin count or numpy rule (default fd)")
    e.add_argument("--out", help="output directory")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="recompute metrics and error density from predictions.csv")
    c.add_argument("predictions")
    c.add_argument("--bins")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("STBEAMSNET_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingFailure as exc:
        print(f"error: training diverged at epoch {exc.epoch}", file=sys.stderr)
        return EXIT_DIVERGED
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (ConfigurationError, ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactError, jsonschema.ValidationError) as exc:
        print(f"error: artifact failed validation: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
