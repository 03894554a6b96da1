"""Synthetic AUV missions: trajectories, 100 Hz inertial and 1 Hz DVL streams.

Per-mission seeds are derived from a root seed with
``numpy.random.SeedSequence(root_seed).generate_state(n_missions)``; inside a
mission, ``SeedSequence(mission_seed).spawn(3)`` gives independent streams for
the trajectory, the IMU noise and the DVL noise (in that order).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .errors import ConfigurationError

log = logging.getLogger(__name__)

GRAVITY = 9.80665
IMU_RATE = 100
DVL_RATE = 1
IMU_PER_DVL = IMU_RATE // DVL_RATE
MIN_DURATION = 60.0

# per-component sinusoid amplitudes at maneuver_richness = 1
_SURGE_AMP = 0.3  # m/s
_SWAY_AMP = 0.06
_HEAVE_AMP = 0.02
_YAW_RATE_AMP = 0.015  # rad/s
_ROLL_AMP = math.radians(10.0) / 3  # peak <= 10 deg
# pitch leaks g*sin(pitch) into the surge accelerometer; near-level keeps surge dynamics observable
_PITCH_AMP = math.radians(0.1) / 3
_VELOCITY_PERIODS = (6.0, 60.0)  # s; puts the 3-sample moving-average error near 0.13 m/s
_ATTITUDE_PERIODS = (30.0, 300.0)
_N_SINES = 3


@dataclass(frozen=True)
class ErrorModel:
    scale_factor: float = 0.007
    bias: float = 0.0001
    noise_std: float = 0.042
    imu_accel_noise_std: float = 0.002
    imu_gyro_noise_std: float = 0.0001

    def __post_init__(self):
        for name in ("scale_factor", "bias", "noise_std", "imu_accel_noise_std", "imu_gyro_noise_std"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")

    @classmethod
    def zero(cls) -> "ErrorModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class MissionConfig:
    duration: float = 600.0
    seed: int = 0
    mean_speed: float = 1.14
    maneuver_richness: float = 1.0
    theta: float = geometry.DEFAULT_THETA
    error_model: ErrorModel = field(default_factory=ErrorModel)
    outage_period: int = 4
    # "beam": corrupt each beam then solve LS; "velocity": corrupt the resolved vector
    corruption: str = "beam"

    def __post_init__(self):
        if self.duration < MIN_DURATION:
            raise ConfigurationError(f"duration must be >= {MIN_DURATION} s, got {self.duration}")
        if float(self.duration) != int(self.duration):
            raise ConfigurationError("duration must be a whole number of seconds")
        if self.mean_speed <= 0:
            raise ConfigurationError("mean_speed must be positive")
        if self.maneuver_richness < 0:
            raise ConfigurationError("maneuver_richness must be non-negative")
        if int(self.outage_period) != self.outage_period or self.outage_period < 1:
            raise ConfigurationError("outage_period must be a positive multiple of the 1 s DVL period")
        if self.corruption not in ("beam", "velocity"):
            raise ConfigurationError(f"unknown corruption mode {self.corruption!r}")

    @property
    def geometry(self) -> geometry.BeamGeometry:
        return geometry.BeamGeometry(self.theta)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "error_model"}
        d["error_model"] = {k: getattr(self.error_model, k) for k in self.error_model.__dataclass_fields__}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MissionConfig":
        d = dict(d)
        err = ErrorModel(**d.pop("error_model", {}))
        return cls(error_model=err, **d)


@dataclass
class Trajectory:
    """Ground truth sampled at 100 Hz from t=0 to t=duration inclusive."""

    t: np.ndarray  # (N,)
    velocity: np.ndarray  # (N, 3) body frame, m/s
    accel: np.ndarray  # (N, 3) d(velocity)/dt, m/s^2
    euler: np.ndarray  # (N, 3) roll, pitch, yaw, rad
    body_rate: np.ndarray  # (N, 3) rad/s


@dataclass
class ImuStream:
    t: np.ndarray  # (N,)
    specific_force: np.ndarray  # (N, 3)
    angular_rate: np.ndarray  # (N, 3)

    def as_array(self) -> np.ndarray:
        """(N, 6): accel xyz then gyro xyz."""
        return np.hstack([self.specific_force, self.angular_rate])


@dataclass
class DvlStream:
    t: np.ndarray  # (M,)
    velocity: np.ndarray  # (M, 3), NaN where invalid
    valid: np.ndarray  # (M,) bool


@dataclass
class MissionRecord:
    config: MissionConfig
    imu: ImuStream
    dvl: DvlStream
    truth: np.ndarray  # (M, 3) at the DVL epochs
    name: str = ""

    @property
    def truth_t(self) -> np.ndarray:
        return self.dvl.t


def mission_seeds(root_seed: int, n_missions: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(root_seed).generate_state(n_missions)]


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _sine_bank(rng: np.random.Generator, amp: float, t: np.ndarray, period_range):
    """Sum of random low-frequency sinusoids and its time derivative."""
    periods = rng.uniform(*period_range, size=_N_SINES)
    phases = rng.uniform(0.0, 2 * math.pi, size=_N_SINES)
    amps = amp * rng.uniform(0.5, 1.0, size=_N_SINES)
    w = 2 * math.pi / periods
    arg = np.outer(t, w) + phases
    value = np.sin(arg) @ amps
    rate = np.cos(arg) @ (amps * w)
    return value, rate, (amps, w, phases)


def euler_rates_to_body(euler: np.ndarray, euler_dot: np.ndarray) -> np.ndarray:
    """ZYX Euler angle rates to body angular rates."""
    phi, th = euler[:, 0], euler[:, 1]
    dphi, dth, dpsi = euler_dot.T
    p = dphi - dpsi * np.sin(th)
    q = dth * np.cos(phi) + dpsi * np.sin(phi) * np.cos(th)
    r = -dth * np.sin(phi) + dpsi * np.cos(phi) * np.cos(th)
    return np.column_stack([p, q, r])


def gravity_body(euler: np.ndarray) -> np.ndarray:
    """Gravity vector (NED, z down) resolved in the body frame."""
    phi, th = euler[:, 0], euler[:, 1]
    return GRAVITY * np.column_stack([-np.sin(th), np.sin(phi) * np.cos(th), np.cos(phi) * np.cos(th)])


def generate_trajectory(config: MissionConfig) -> Trajectory:
    """Smooth body-velocity and attitude profile for one mission.

    Surge is ``mean_speed`` plus three low-frequency sinusoids; sway and heave
    are sinusoid banks around zero. Heading integrates a sinusoidal yaw rate;
    roll stays within +/-10 deg and pitch near level. Amplitudes scale with
    ``maneuver_richness``; the velocity is rescaled so its time-mean speed
    equals ``mean_speed``.
    """
    if config.duration < MIN_DURATION:
        raise ConfigurationError(f"duration must be >= {MIN_DURATION} s")
    rng = _streams(config.seed)[0]
    n = int(round(config.duration * IMU_RATE)) + 1
    t = np.arange(n) / IMU_RATE
    r = config.maneuver_richness

    vel = np.zeros((n, 3))
    acc = np.zeros((n, 3))
    vel[:, 0] = config.mean_speed
    for axis, amp in enumerate((_SURGE_AMP, _SWAY_AMP, _HEAVE_AMP)):
        value, rate, _ = _sine_bank(rng, amp * r, t, _VELOCITY_PERIODS)
        vel[:, axis] += value
        acc[:, axis] += rate

    euler = np.zeros((n, 3))
    euler_dot = np.zeros((n, 3))
    for axis, amp in enumerate((_ROLL_AMP, _PITCH_AMP)):
        euler[:, axis], euler_dot[:, axis], _ = _sine_bank(rng, amp * r, t, _ATTITUDE_PERIODS)
    yaw0 = rng.uniform(-math.pi, math.pi)
    _, _, (amps, w, phases) = _sine_bank(rng, _YAW_RATE_AMP * r, t, _ATTITUDE_PERIODS)
    arg = np.outer(t, w) + phases
    euler_dot[:, 2] = np.sin(arg) @ amps
    euler[:, 2] = yaw0 + (np.cos(phases) - np.cos(arg)) @ (amps / w)
    euler[:, 2] = (euler[:, 2] + math.pi) % (2 * math.pi) - math.pi

    if r > 0:
        scale = config.mean_speed / np.linalg.norm(vel, axis=1).mean()
        vel *= scale
        acc *= scale
    return Trajectory(t, vel, acc, euler, euler_rates_to_body(euler, euler_dot))


def synthesize_imu(traj: Trajectory, err: ErrorModel, rng: np.random.Generator) -> ImuStream:
    """100 Hz specific force and angular rate, excluding the t=0 sample.

    Specific force is d(velocity)/dt minus body-frame gravity (so a level
    vehicle at rest reads [0, 0, -g]) plus white noise.
    """
    sl = slice(1, None)
    n = len(traj.t) - 1
    force = traj.accel[sl] - gravity_body(traj.euler[sl])
    rate = traj.body_rate[sl].copy()
    force = force + rng.normal(0.0, 1.0, size=(n, 3)) * err.imu_accel_noise_std
    rate = rate + rng.normal(0.0, 1.0, size=(n, 3)) * err.imu_gyro_noise_std
    return ImuStream(traj.t[sl].copy(), force, rate)


def corrupt_beams(beams: np.ndarray, err: ErrorModel, rng: np.random.Generator) -> np.ndarray:
    noise = rng.normal(0.0, 1.0, size=beams.shape) * err.noise_std
    return beams * (1.0 + err.scale_factor) + err.bias + noise


def synthesize_dvl(
    truth: np.ndarray,
    geom: geometry.BeamGeometry,
    err: ErrorModel,
    rng: np.random.Generator,
    corruption: str = "beam",
) -> np.ndarray:
    """LS-resolved DVL velocities for truth velocities ``truth`` (M, 3)."""
    H = geometry.build_direction_matrix(geom)
    if corruption == "velocity":
        return corrupt_beams(np.asarray(truth, dtype=np.float64), err, rng)
    beams = geometry.body_to_beam(H, truth)
    return geometry.ls_solve(H, corrupt_beams(beams, err, rng))


def apply_outage_schedule(dvl: DvlStream, period: int) -> DvlStream:
    """Mark every ``period``-th epoch (t = period, 2*period, ...) invalid."""
    if int(period) != period or period < 1:
        raise ConfigurationError("outage period must be a positive whole number of seconds")
    ticks = np.rint(dvl.t).astype(np.int64)
    out = (ticks % int(period) == 0) & (ticks > 0)
    valid = dvl.valid & ~out
    velocity = dvl.velocity.copy()
    velocity[~valid] = np.nan
    return DvlStream(dvl.t.copy(), velocity, valid)


def simulate_mission(config: MissionConfig, name: str = "") -> MissionRecord:
    _, imu_rng, dvl_rng = _streams(config.seed)
    traj = generate_trajectory(config)
    imu = synthesize_imu(traj, config.error_model, imu_rng)
    idx = np.arange(IMU_PER_DVL, len(traj.t), IMU_PER_DVL)
    truth = traj.velocity[idx]
    vel = synthesize_dvl(truth, config.geometry, config.error_model, dvl_rng, config.corruption)
    dvl = DvlStream(traj.t[idx].copy(), vel, np.ones(len(idx), dtype=bool))
    dvl = apply_outage_schedule(dvl, config.outage_period)
    return MissionRecord(config, imu, dvl, truth, name=name)


def simulate_missions(base: MissionConfig, n_missions: int, root_seed: int) -> list[MissionRecord]:
    return [
        simulate_mission(replace(base, seed=s), name=f"mission_{i:02d}")
        for i, s in enumerate(mission_seeds(root_seed, n_missions))
    ]


@dataclass
class Samples:
    """Struct-of-arrays batch of training samples."""

    imu: np.ndarray  # (S, 100, 6)
    dvl: np.ndarray  # (S, n_history, 3), oldest first
    target: np.ndarray  # (S, 3)
    t: np.ndarray  # (S,)
    mission: np.ndarray  # (S,) mission names

    def __len__(self) -> int:
        return len(self.target)

    def __getitem__(self, idx) -> "Samples":
        return Samples(self.imu[idx], self.dvl[idx], self.target[idx], self.t[idx], self.mission[idx])

    @classmethod
    def empty(cls, n_history: int = 3) -> "Samples":
        return cls(
            np.zeros((0, IMU_PER_DVL, 6)), np.zeros((0, n_history, 3)), np.zeros((0, 3)),
            np.zeros(0), np.zeros(0, dtype=object),
        )

    @classmethod
    def concat(cls, parts: list["Samples"]) -> "Samples":
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("imu", "dvl", "target", "t", "mission")))


def outage_samples(mission: MissionRecord, n_history: int = 3) -> Samples:
    """One sample per outage epoch that has ``n_history`` earlier valid epochs.

    The history holds the most recent valid DVL velocities before the epoch
    (oldest first); the IMU window is the 100 samples in (t-1, t].
    """
    dvl = mission.dvl
    imu = mission.imu.as_array()
    valid_idx = np.flatnonzero(dvl.valid)
    rows = {k: [] for k in ("imu", "dvl", "target", "t")}
    skipped = 0
    for j in np.flatnonzero(~dvl.valid):
        prior = valid_idx[valid_idx < j][-n_history:] if n_history else valid_idx[:0]
        end = (j + 1) * IMU_PER_DVL
        if len(prior) < n_history or end > len(imu):
            skipped += 1
            continue
        rows["imu"].append(imu[end - IMU_PER_DVL : end])
        rows["dvl"].append(dvl.velocity[prior])
        rows["target"].append(mission.truth[j])
        rows["t"].append(dvl.t[j])
    if skipped:
        log.warning("%s: skipped %d outage epoch(s) lacking %d valid prior DVL epochs",
                    mission.name or "mission", skipped, n_history)
    if not rows["t"]:
        log.warning("%s: no eligible outage epochs", mission.name or "mission")
        return Samples.empty(n_history)
    return Samples(
        np.asarray(rows["imu"]), np.asarray(rows["dvl"]), np.asarray(rows["target"]),
        np.asarray(rows["t"]), np.array([mission.name] * len(rows["t"]), dtype=object),
    )


@dataclass
class DatasetSplits:
    train: Samples
    val: Samples
    test: Samples
    test_mission: str
    train_missions: list[str]


def choose_test_mission(n_missions: int, seed: int) -> int:
    return int(np.random.default_rng(seed).integers(n_missions))


def split_train_val(missions: list[MissionRecord], n_history: int = 3, seed: int = 0,
                    val_fraction: float = 0.1) -> tuple[Samples, Samples]:
    """Pool the missions' samples and split them train/val with a seeded shuffle."""
    pool = Samples.concat([outage_samples(m, n_history) for m in missions])
    order = np.random.default_rng(seed).permutation(len(pool))
    n_val = int(round(val_fraction * len(pool)))
    if len(pool) > 1:
        n_val = min(max(n_val, 1), len(pool) - 1)
    return pool[np.sort(order[n_val:])], pool[np.sort(order[:n_val])]


def build_dataset(
    missions: list[MissionRecord],
    n_history: int = 3,
    seed: int = 0,
    val_fraction: float = 0.1,
    test_index: int | None = None,
) -> DatasetSplits:
    """Hold out one mission for test; split the rest's samples train/val."""
    if len(missions) < 2:
        raise ConfigurationError("need at least 2 missions (one is held out for test)")
    if test_index is None:
        test_index = choose_test_mission(len(missions), seed)
    rest = [m for i, m in enumerate(missions) if i != test_index]
    train, val = split_train_val(rest, n_history, seed, val_fraction)
    return DatasetSplits(
        train=train,
        val=val,
        test=outage_samples(missions[test_index], n_history),
        test_mission=missions[test_index].name,
        train_missions=[m.name for m in rest],
    )
