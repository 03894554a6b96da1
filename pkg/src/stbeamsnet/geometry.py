"""Janus-configuration DVL beam geometry and least-squares velocity recovery.

Four beams are tilted by a common pitch ``theta`` from the body z-axis (down)
with headings 45, 135, 225 and 315 degrees. Beam velocities are the projection
of the body velocity onto each beam direction, ``y = H v``; the body velocity is
recovered from measured beams with the normal-equations solution
``v = (H^T H)^-1 H^T y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateGeometryError

BEAM_COUNT = 4
DEFAULT_THETA = math.radians(20.0)
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class BeamGeometry:
    theta: float = DEFAULT_THETA
    beam_count: int = BEAM_COUNT

    def __post_init__(self):
        if self.beam_count != BEAM_COUNT:
            raise ValueError(f"beam_count is fixed at {BEAM_COUNT}, got {self.beam_count}")
        if not 0.0 < self.theta < math.pi / 2:
            raise ValueError(f"theta must lie in (0, pi/2), got {self.theta}")

    def heading(self, i: int) -> float:
        return beam_heading(i)


def beam_heading(i: int) -> float:
    """Heading of beam ``i`` (1-based), radians."""
    if i not in (1, 2, 3, 4):
        raise ValueError(f"beam index must be 1..4, got {i!r}")
    return (i - 1) * math.pi / 2 + math.pi / 4


def beam_direction(i: int, theta: float) -> np.ndarray:
    """Unit vector of beam ``i`` in the body frame for pitch ``theta``."""
    psi = beam_heading(i)
    if not 0.0 <= theta <= math.pi / 2:
        raise ValueError(f"theta must lie in [0, pi/2], got {theta}")
    s = math.sin(theta)
    return np.array([math.cos(psi) * s, math.sin(psi) * s, math.cos(theta)])


def build_direction_matrix(geometry: BeamGeometry | float) -> np.ndarray:
    """4x3 matrix whose rows are the beam directions."""
    theta = geometry.theta if isinstance(geometry, BeamGeometry) else float(geometry)
    return np.vstack([beam_direction(i, theta) for i in range(1, BEAM_COUNT + 1)])


def body_to_beam(H: np.ndarray, v) -> np.ndarray:
    """Project body velocities onto the beams. ``v`` may be (3,) or (N, 3)."""
    v = np.asarray(v, dtype=np.float64)
    return v @ H.T


def ls_solve(H: np.ndarray, y) -> np.ndarray:
    """Least-squares body velocity from beam velocities ``y`` ((4,) or (N, 4)).

    Solves the normal equations with a Cholesky factorization; falls back to a
    partially pivoted LU factorization if Cholesky fails. Raises
    DegenerateGeometryError when ``H^T H`` has condition number above 1e12.
    """
    H = np.asarray(H, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    normal = H.T @ H
    cond = np.linalg.cond(normal)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DegenerateGeometryError(
            f"H^T H is singular or ill-conditioned (cond={cond:.3g}); beam pitch too close to 0?"
        )
    rhs = y @ H  # rows of H^T y
    try:
        factor = scipy.linalg.cho_factor(normal)
        return scipy.linalg.cho_solve(factor, rhs.T).T
    except np.linalg.LinAlgError:
        return scipy.linalg.lu_solve(scipy.linalg.lu_factor(normal), rhs.T).T


def ls_covariance(H: np.ndarray, noise_std: float) -> np.ndarray:
    """Covariance of the LS velocity for i.i.d. beam noise of std ``noise_std``."""
    return noise_std**2 * np.linalg.inv(H.T @ H)
