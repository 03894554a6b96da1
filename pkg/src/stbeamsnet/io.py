"""On-disk mission directories and the dataset manifest.

A mission directory holds::

    imu.csv     t, fx, fy, fz, wx, wy, wz      (100 Hz, m/s^2 and rad/s)
    dvl.csv     t, vx, vy, vz, valid           (1 Hz; velocity fields empty when valid=0)
    truth.csv   t, vx, vy, vz                  (1 Hz body-frame ground truth)
    config.json the MissionConfig that produced it

Numbers are written with 9 significant digits. ``dataset.json`` lists the
mission directories (relative to the manifest), each mission's seed, split
("train" or "test") and a SHA-256 over its three CSV files, together with the
root seed, ``n_history``, the validation fraction and the model
hyper-parameters.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .sim import DvlStream, ImuStream, MissionConfig, MissionRecord

MANIFEST_VERSION = 1
FMT = "%.9g"


def write_mission(directory, mission: MissionRecord) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    imu = np.column_stack([mission.imu.t, mission.imu.specific_force, mission.imu.angular_rate])
    np.savetxt(d / "imu.csv", imu, fmt=FMT, delimiter=",", header="t,fx,fy,fz,wx,wy,wz", comments="")
    truth = np.column_stack([mission.dvl.t, mission.truth])
    np.savetxt(d / "truth.csv", truth, fmt=FMT, delimiter=",", header="t,vx,vy,vz", comments="")
    with open(d / "dvl.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "vx", "vy", "vz", "valid"])
        for t, v, ok in zip(mission.dvl.t, mission.dvl.velocity, mission.dvl.valid):
            fields = [FMT % x for x in v] if ok else ["", "", ""]
            w.writerow([FMT % t, *fields, int(ok)])
    (d / "config.json").write_text(json.dumps(mission.config.to_dict(), indent=2, sort_keys=True) + "\n")
    return d


def read_mission(directory) -> MissionRecord:
    d = Path(directory)
    config = MissionConfig.from_dict(json.loads((d / "config.json").read_text()))
    imu = np.loadtxt(d / "imu.csv", delimiter=",", skiprows=1, ndmin=2)
    truth = np.loadtxt(d / "truth.csv", delimiter=",", skiprows=1, ndmin=2)
    dvl = np.genfromtxt(d / "dvl.csv", delimiter=",", skip_header=1, ndmin=2)
    valid = dvl[:, 4].astype(bool)
    velocity = dvl[:, 1:4].copy()
    velocity[~valid] = np.nan
    return MissionRecord(
        config,
        ImuStream(imu[:, 0], imu[:, 1:4], imu[:, 4:7]),
        DvlStream(dvl[:, 0], velocity, valid),
        truth[:, 1:4],
        name=d.name,
    )


def mission_hash(directory) -> str:
    h = hashlib.sha256()
    for name in ("imu.csv", "dvl.csv", "truth.csv"):
        h.update((Path(directory) / name).read_bytes())
    return h.hexdigest()


def write_manifest(path, missions: list[dict], root_seed: int, n_history: int = 3,
                   val_fraction: float = 0.1, **extra) -> Path:
    """``missions`` entries: {"name", "dir", "seed", "split", "sha256"}."""
    doc = {
        "format_version": MANIFEST_VERSION,
        "root_seed": root_seed,
        "n_history": n_history,
        "val_fraction": val_fraction,
        "missions": missions,
        **extra,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {doc.get('format_version')!r}")
    splits = [m["split"] for m in doc["missions"]]
    if splits.count("test") != 1 or any(s not in ("train", "test") for s in splits):
        raise ValueError("manifest must assign exactly one test mission and mark the rest 'train'")
    doc["_root"] = str(path.parent)
    return doc


def manifest_missions(doc: dict, split: str | None = None) -> list[tuple[dict, Path]]:
    root = Path(doc["_root"])
    return [(m, root / m["dir"]) for m in doc["missions"] if split is None or m["split"] == split]
