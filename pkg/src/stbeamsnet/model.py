"""Two-branch Set-Transformer velocity forecaster, training and inference.

Each branch (IMU window, DVL history) runs patch embedding, an SAB encoder and
a PMA decoder; the two k x d decoder outputs are flattened row-major (seed
index outermost), concatenated and passed through affine -> ReLU -> affine to
give a body-frame velocity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .blocks import Decoder, Encoder, Hyperparams, PatchEmbed
from .errors import CompatibilityError, ConfigurationError, ShapeError, TrainingFailure
from .nn import Module, Tensor, affine, concat, flatten, glorot_uniform, relu, swapaxes, zeros
from .sim import IMU_PER_DVL, MissionRecord, Samples, outage_samples

log = logging.getLogger(__name__)

IMU_CHANNELS = 6
DVL_CHANNELS = 3
DEFAULT_HEAD_WIDTH = 512
DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    patience: int = 15
    precision: str = "float32"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0 or self.patience < 1:
            raise ConfigurationError(f"invalid training config {self}")
        if self.precision not in DTYPES:
            raise ConfigurationError(f"precision must be one of {sorted(DTYPES)}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Normalizer:
    """Per-channel standardization of inputs and targets, fitted on the train split."""

    imu_mean: np.ndarray
    imu_std: np.ndarray
    dvl_mean: np.ndarray
    dvl_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(np.zeros(IMU_CHANNELS), np.ones(IMU_CHANNELS), np.zeros(DVL_CHANNELS),
                   np.ones(DVL_CHANNELS), np.zeros(3), np.ones(3))

    @classmethod
    def fit(cls, samples: Samples) -> "Normalizer":
        def stats(x):
            x = x.reshape(-1, x.shape[-1])
            std = x.std(axis=0)
            return x.mean(axis=0), np.where(std > 1e-12, std, 1.0)

        return cls(*stats(samples.imu), *stats(samples.dvl), *stats(samples.target))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(v, dtype=np.float64) for k, v in asdict(self).items()}


class Branch(Module):
    def __init__(self, c_in: int, hp: Hyperparams, rng: np.random.Generator, dtype):
        self.embed = PatchEmbed(c_in, hp, rng, dtype)
        self.encoder = Encoder(hp, rng, dtype)
        self.decoder = Decoder(hp, rng, dtype)

    def tokens(self, x: Tensor) -> Tensor:
        """(..., L, C_in) time-major window -> (..., N, d) tokens."""
        return self.embed(swapaxes(x, -1, -2))

    def pool(self, tokens: Tensor) -> Tensor:
        """(..., N, d) -> (..., k*d)."""
        return flatten(self.decoder(self.encoder(tokens)), -2)


class StBeamsNet(Module):
    def __init__(self, hp: Hyperparams = Hyperparams(), head_width: int = DEFAULT_HEAD_WIDTH,
                 seed: int = 0, dtype=np.float32, normalizer: Normalizer | None = None):
        rng = np.random.default_rng(seed)
        self.hp = hp
        self.head_width = head_width
        self.normalizer = normalizer or Normalizer.identity()
        self.imu = Branch(IMU_CHANNELS, hp, rng, dtype)
        self.dvl = Branch(DVL_CHANNELS, hp, rng, dtype)
        fused = 2 * hp.k * hp.d
        self.head_w1 = glorot_uniform(rng, (fused, head_width), fused, head_width, dtype)
        self.head_b1 = zeros(head_width, dtype)
        self.head_w2 = glorot_uniform(rng, (head_width, 3), head_width, 3, dtype)
        self.head_b2 = zeros(3, dtype)

    def _standardize(self, x, mean, std, name: str, length: int | None, channels: int) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim < 2 or x.shape[-1] != channels or (length is not None and x.shape[-2] != length):
            raise ShapeError(f"{name} branch: expected (..., {length or 'L'}, {channels}), got {x.shape}")
        return (x - mean.astype(self.dtype)) * (1.0 / std).astype(self.dtype)

    def embed_tokens(self, imu, dvl) -> tuple[Tensor, Tensor]:
        n = self.normalizer
        imu = self._standardize(imu, n.imu_mean, n.imu_std, "imu", None, IMU_CHANNELS)
        dvl = self._standardize(dvl, n.dvl_mean, n.dvl_std, "dvl", None, DVL_CHANNELS)
        return self.imu.tokens(imu), self.dvl.tokens(dvl)

    def from_tokens(self, imu_tokens: Tensor, dvl_tokens: Tensor) -> Tensor:
        fused = concat([self.imu.pool(imu_tokens), self.dvl.pool(dvl_tokens)], axis=-1)
        out = affine(relu(affine(fused, self.head_w1, self.head_b1)), self.head_w2, self.head_b2)
        n = self.normalizer
        return out * n.target_std.astype(self.dtype) + n.target_mean.astype(self.dtype)

    def forward(self, imu, dvl) -> Tensor:
        """IMU window (..., L, 6) and DVL history (..., n, 3) -> velocity (..., 3)."""
        return self.from_tokens(*self.embed_tokens(imu, dvl))

    def predict(self, imu: np.ndarray, dvl: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        with nn.no_grad():
            for i in range(0, len(imu), batch_size):
                out.append(self.forward(imu[i : i + batch_size], dvl[i : i + batch_size]).data)
        return np.concatenate(out).astype(np.float64) if out else np.zeros((0, 3))

    # --- persistence -----------------------------------------------------
    def meta(self) -> dict:
        return {"hyperparams": self.hp.to_dict(), "head_width": self.head_width,
                "dtype": np.dtype(self.dtype).name}

    def save(self, path, meta: dict | None = None, extra: dict | None = None) -> Path:
        extra = dict(extra or {})
        extra.update({f"norm.{k}": v for k, v in self.normalizer.arrays().items()})
        return nn.save_checkpoint(path, self.state_dict(), {**self.meta(), **(meta or {})}, extra)

    @classmethod
    def load(cls, path, hp: Hyperparams | None = None) -> tuple["StBeamsNet", dict, dict]:
        params, meta, extra = nn.load_checkpoint(path)
        saved = Hyperparams(**meta["hyperparams"])
        if hp is not None and hp != saved:
            raise CompatibilityError(f"checkpoint hyper-parameters {saved} differ from requested {hp}")
        norm = Normalizer(**{k[len("norm."):]: v for k, v in extra.items() if k.startswith("norm.")})
        model = cls(saved, meta["head_width"], dtype=DTYPES[meta["dtype"]], normalizer=norm)
        model.load_state_dict(params)
        return model, meta, extra


@dataclass
class TrainResult:
    model: StBeamsNet
    history: list[tuple[int, float, float]]  # (epoch, train_mse, val_mse)
    best_epoch: int
    best_val_mse: float
    initial_val_mse: float
    last_state: dict = field(default_factory=dict, repr=False)
    optimizer: nn.Adam | None = field(default=None, repr=False)
    stale_epochs: int = 0


def evaluate_mse(model: StBeamsNet, samples: Samples, batch_size: int = 64) -> float:
    pred = model.predict(samples.imu, samples.dvl, batch_size)
    return float(np.mean((pred - samples.target) ** 2))


def train(
    train_set: Samples,
    val_set: Samples,
    config: TrainConfig = TrainConfig(),
    hp: Hyperparams = Hyperparams(),
    head_width: int = DEFAULT_HEAD_WIDTH,
    resume: TrainResult | None = None,
    on_epoch=None,
) -> TrainResult:
    """Minimize MSE on ``train_set``, keeping the best-validation parameters.

    Batches are shuffled with ``default_rng([seed, epoch])`` so a resumed run
    reproduces the uninterrupted one. ``on_epoch(epoch, train_mse, val_mse)``
    is called after every epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigurationError("training and validation splits must be non-empty")
    dtype = DTYPES[config.precision]

    if resume is None:
        model = StBeamsNet(hp, head_width, seed=config.seed, dtype=dtype, normalizer=Normalizer.fit(train_set))
        optimizer = nn.Adam(model.parameters(), lr=config.learning_rate)
        initial = evaluate_mse(model, val_set)
        history: list[tuple[int, float, float]] = []
        best_state, best_val, best_epoch, stale = model.state_dict(), initial, 0, 0
        start = 1
    else:
        model = resume.model
        best_state = model.state_dict()
        model.load_state_dict(resume.last_state)
        optimizer = resume.optimizer or nn.Adam(model.parameters(), lr=config.learning_rate)
        optimizer.lr = config.learning_rate
        initial = resume.initial_val_mse
        history = list(resume.history)
        best_val, best_epoch, stale = resume.best_val_mse, resume.best_epoch, resume.stale_epochs
        start = (history[-1][0] + 1) if history else 1

    imu = train_set.imu.astype(dtype)
    dvl = train_set.dvl.astype(dtype)
    target = train_set.target.astype(dtype)
    params = model.parameters()
    last_epoch = start - 1
    for epoch in range(start, start + config.epochs):
        if stale >= config.patience:
            break
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            for p in params:
                p.grad = None
            loss = nn.mse_loss(model(imu[idx], dvl[idx]), target[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingFailure(epoch)
            loss.backward()
            optimizer.step()
            total += value * len(idx)
        train_mse = total / len(order)
        val_mse = evaluate_mse(model, val_set)
        if not math.isfinite(val_mse):
            raise TrainingFailure(epoch)
        history.append((epoch, train_mse, val_mse))
        last_epoch = epoch
        if val_mse < best_val:
            best_val, best_epoch, stale = val_mse, epoch, 0
            best_state = model.state_dict()
        else:
            stale += 1
        log.info("epoch %d train_mse=%.6g val_mse=%.6g", epoch, train_mse, val_mse)
        if on_epoch is not None:
            on_epoch(epoch, train_mse, val_mse)
    if stale >= config.patience and last_epoch < start + config.epochs - 1:
        log.info("early stop after epoch %d (best %d)", last_epoch, best_epoch)

    last_state = model.state_dict()
    model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, best_val, initial, last_state, optimizer, stale)


def save_training(result: TrainResult, path, config: TrainConfig, meta: dict | None = None) -> Path:
    """Checkpoint with best parameters plus everything needed to resume."""
    extra = {f"last.{k}": v for k, v in result.last_state.items()}
    if result.optimizer is not None:
        extra.update({f"adam.{k}": v for k, v in result.optimizer.state_arrays().items()})
    info = {
        "train_config": config.to_dict(),
        "history": [list(h) for h in result.history],
        "best_epoch": result.best_epoch,
        "best_val_mse": result.best_val_mse,
        "initial_val_mse": result.initial_val_mse,
        "stale_epochs": result.stale_epochs,
        **(meta or {}),
    }
    return result.model.save(path, info, extra)


def load_training(path, config: TrainConfig) -> TrainResult:
    model, meta, extra = StBeamsNet.load(path)
    last = {k[len("last."):]: v for k, v in extra.items() if k.startswith("last.")}
    optimizer = nn.Adam(model.parameters(), lr=config.learning_rate)
    adam = {k[len("adam."):]: v for k, v in extra.items() if k.startswith("adam.")}
    if adam:
        optimizer.load_state_arrays(adam)
    return TrainResult(
        model, [tuple(h) for h in meta.get("history", [])], meta.get("best_epoch", 0),
        meta.get("best_val_mse", math.inf), meta.get("initial_val_mse", math.inf),
        last or model.state_dict(), optimizer, meta.get("stale_epochs", 0),
    )


@dataclass
class Predictions:
    """Forecasts at outage epochs of one or more missions."""

    t: np.ndarray  # (S,)
    mission: np.ndarray  # (S,)
    truth: np.ndarray  # (S, 3)
    pred: np.ndarray  # (S, 3)

    def __len__(self) -> int:
        return len(self.t)

    def keys(self) -> list[tuple[str, float]]:
        return list(zip(self.mission.tolist(), self.t.tolist()))


def predict_samples(model: StBeamsNet, samples: Samples) -> Predictions:
    return Predictions(samples.t.copy(), samples.mission.copy(), samples.target.copy(),
                       model.predict(samples.imu, samples.dvl))


def predict_outages(mission: MissionRecord, model: StBeamsNet, n_history: int = 3) -> Predictions:
    """Forecast every outage epoch with enough measured history."""
    samples = outage_samples(mission, n_history)
    if samples.imu.shape[1:] != (IMU_PER_DVL, IMU_CHANNELS) and len(samples):
        raise ShapeError(f"unexpected IMU window shape {samples.imu.shape[1:]}")
    return predict_samples(model, samples)
