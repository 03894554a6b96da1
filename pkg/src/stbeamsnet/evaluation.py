"""Moving-average baseline, forecast metrics and report artifacts.

Headline metrics compare velocity-vector norms: x_i = |truth_i|, x^_i = |pred_i|.
Percent figures are relative to the mean truth norm.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, InsufficientHistoryError
from .model import Predictions


def moving_average(history, n: int = 3) -> np.ndarray:
    """Componentwise mean of the last ``n`` velocities; ``history`` is (..., m, 3), oldest first."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim < 2 or history.shape[-2] < n:
        raise InsufficientHistoryError(f"moving average needs {n} past velocities, got shape {history.shape}")
    return history[..., -n:, :].mean(axis=-2)


@dataclass
class MetricsReport:
    rmse: float
    rmse_pct: float
    mae: float
    mae_pct: float
    r2: float
    vaf: float
    mean_truth_norm: float
    sample_count: int
    per_axis_rmse: list[float] = field(default_factory=list)
    per_axis_mae: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def percent_of(value: float, reference: float) -> float:
    return value / reference * 100.0


def compute_metrics(truth, pred) -> MetricsReport:
    """RMSE, MAE, R^2 and VAF on velocity norms, plus per-axis RMSE/MAE."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError(f"truth {truth.shape} and prediction {pred.shape} differ")
    if len(truth) < 2:
        raise ValueError("metrics need at least 2 samples")
    x = np.linalg.norm(truth, axis=-1) if truth.ndim == 2 else truth
    xhat = np.linalg.norm(pred, axis=-1) if pred.ndim == 2 else pred
    err = x - xhat
    total = np.sum((x - x.mean()) ** 2)
    if total == 0.0:
        raise ValueError("R^2 and VAF are undefined for constant truth norms")
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    mean_norm = float(x.mean())
    axis_err = truth - pred if truth.ndim == 2 else err[:, None]
    return MetricsReport(
        rmse=rmse,
        rmse_pct=percent_of(rmse, mean_norm),
        mae=mae,
        mae_pct=percent_of(mae, mean_norm),
        r2=float(1.0 - np.sum(err**2) / total),
        vaf=float((1.0 - np.var(err) / np.var(x)) * 100.0),
        mean_truth_norm=mean_norm,
        sample_count=int(len(x)),
        per_axis_rmse=np.sqrt(np.mean(axis_err**2, axis=0)).tolist(),
        per_axis_mae=np.mean(np.abs(axis_err), axis=0).tolist(),
    )


def relative_improvement(rmse_model: float, rmse_baseline: float) -> float:
    """Percent RMSE reduction of the model relative to the baseline."""
    return (rmse_baseline - rmse_model) / rmse_baseline * 100.0


@dataclass
class Comparison:
    model: MetricsReport
    baseline: MetricsReport
    improvement_pct: float

    def to_dict(self) -> dict:
        return {"st_beamsnet": self.model.to_dict(), "moving_average": self.baseline.to_dict(),
                "rmse_improvement_pct": self.improvement_pct}


def compare_methods(model_preds: Predictions, baseline_preds: Predictions) -> Comparison:
    if model_preds.keys() != baseline_preds.keys():
        raise AlignmentError("prediction lists cover different outage epochs")
    if not np.array_equal(model_preds.truth, baseline_preds.truth):
        raise AlignmentError("prediction lists disagree on ground truth")
    st = compute_metrics(model_preds.truth, model_preds.pred)
    ma = compute_metrics(baseline_preds.truth, baseline_preds.pred)
    return Comparison(st, ma, relative_improvement(st.rmse, ma.rmse))


@dataclass
class ErrorDensity:
    edges: np.ndarray
    probabilities: dict[str, np.ndarray]
    mean_error: dict[str, float]
    variance: dict[str, float]

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def norm_errors(preds: Predictions) -> np.ndarray:
    """Signed speed error |pred| - |truth|."""
    return np.linalg.norm(preds.pred, axis=-1) - np.linalg.norm(preds.truth, axis=-1)


def error_density(errors: dict[str, np.ndarray], bins: int | str = "fd") -> ErrorDensity:
    """Histogram of signed errors per method on shared bins, normalized to unit mass.

    ``bins`` is a count or a numpy rule name; the default is Freedman-Diaconis.
    """
    errors = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in errors.items()}
    if any(len(v) == 0 for v in errors.values()):
        raise ValueError("every method needs at least one error value")
    pooled = np.concatenate(list(errors.values()))
    if np.ptp(pooled) == 0.0:
        edges = np.array([pooled[0] - 0.5, pooled[0] + 0.5])
    else:
        edges = np.histogram_bin_edges(pooled, bins=bins)
    probs = {k: np.histogram(v, bins=edges)[0] / len(v) for k, v in errors.items()}
    return ErrorDensity(
        edges,
        probs,
        {k: float(v.mean()) for k, v in errors.items()},
        {k: float(v.var()) for k, v in errors.items()},
    )


# --- artifacts -------------------------------------------------------------


def write_metrics_json(path, comparison: Comparison, density: ErrorDensity | None = None, **context) -> Path:
    doc = comparison.to_dict()
    if density is not None:
        doc["error_stats"] = {"mean_error": density.mean_error, "error_variance": density.variance}
    doc.update(context)
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_error_density_csv(path, density: ErrorDensity, model_key: str = "st", baseline_key: str = "ma") -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center", "st_probability", "ma_probability"])
        for c, p_st, p_ma in zip(density.centers, density.probabilities[model_key], density.probabilities[baseline_key]):
            w.writerow([f"{c:.9g}", f"{p_st:.9g}", f"{p_ma:.9g}"])
    return path


def write_predictions_csv(path, model_preds: Predictions, baseline_preds: Predictions) -> Path:
    if model_preds.keys() != baseline_preds.keys():
        raise AlignmentError("prediction lists cover different outage epochs")
    path = Path(path)
    cols = ["t", "mission", "truth_x", "truth_y", "truth_z", "st_x", "st_y", "st_z", "ma_x", "ma_y", "ma_z"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(model_preds)):
            vals = [*model_preds.truth[i], *model_preds.pred[i], *baseline_preds.pred[i]]
            w.writerow([f"{model_preds.t[i]:.9g}", model_preds.mission[i], *(f"{v:.9g}" for v in vals)])
    return path
