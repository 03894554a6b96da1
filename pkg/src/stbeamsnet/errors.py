"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateGeometryError(ValueError):
    """Beam geometry makes the least-squares problem singular or ill-conditioned."""


class ConfigurationError(ValueError):
    """Invalid hyper-parameters, training config, or dataset layout."""


class TrainingFailure(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class InsufficientHistoryError(ValueError):
    """Fewer past DVL velocities than the forecaster needs."""


class AlignmentError(ValueError):
    """Two prediction lists do not cover the same outage epochs."""


class CompatibilityError(ValueError):
    """Checkpoint does not match the requested hyper-parameters."""
