"""Shared domain types and elementary Gaussian computations.

State ordering throughout the package is ``(pos_x, vel_x, pos_y, vel_y)``.
Beliefs may carry leading batch dimensions (for example one row per target),
and every function in :mod:`vbtrack.kalman` broadcasts over them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

STATE_DIM = 4
MEAS_DIM = 2
LOG_2PI = float(np.log(2.0 * np.pi))

#: ``origin_label`` value used for clutter returns.
CLUTTER = -1

#: Noise variance used in place of an exactly-zero measurement noise.
MIN_NOISE_VAR = 1e-6


class TrackingError(Exception):
    """Base class for errors raised by this package."""


class SingularModelError(TrackingError, np.linalg.LinAlgError):
    """A covariance that must be positive definite is not."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"matrix '{name}' is singular or not positive definite"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ConfigurationError(TrackingError, ValueError):
    """Invalid model or experiment configuration."""


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _jitter(m: np.ndarray) -> np.ndarray:
    tr = np.trace(m, axis1=-2, axis2=-1)
    eye = np.eye(m.shape[-1])
    return m + 1e-9 * np.abs(tr)[..., None, None] * eye


def cholesky(m: np.ndarray, name: str) -> np.ndarray:
    """Lower Cholesky factor, retrying once with trace-scaled jitter."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(_jitter(m))
    except np.linalg.LinAlgError as exc:
        raise SingularModelError(name, str(exc)) from None


def solve(a: np.ndarray, b: np.ndarray, name: str) -> np.ndarray:
    """``a^{-1} b`` for (batched) square ``a``, with one jittered retry."""
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.solve(_jitter(a), b)
    except np.linalg.LinAlgError as exc:
        raise SingularModelError(name, str(exc)) from None


def inv_spd(m: np.ndarray, name: str) -> np.ndarray:
    try:
        out = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        try:
            out = np.linalg.inv(_jitter(m))
        except np.linalg.LinAlgError as exc:
            raise SingularModelError(name, str(exc)) from None
    return symmetrize(out)


def logdet_spd(m: np.ndarray, name: str) -> np.ndarray:
    sign, logdet = np.linalg.slogdet(m)
    if np.any(sign <= 0):
        sign, logdet = np.linalg.slogdet(_jitter(m))
        if np.any(sign <= 0):
            raise SingularModelError(name, "non-positive determinant")
    return logdet


def state_vector(pos_x: float, vel_x: float, pos_y: float, vel_y: float) -> np.ndarray:
    return np.array([pos_x, vel_x, pos_y, vel_y], dtype=float)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a target state.

    ``mean`` has shape ``(..., 4)`` and ``cov`` shape ``(..., 4, 4)``; the
    leading dimensions index a stack of independent beliefs.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def batch_shape(self) -> tuple:
        return self.mean.shape[:-1]

    def __getitem__(self, idx) -> "GaussianBelief":
        return GaussianBelief(self.mean[idx], self.cov[idx])

    def __len__(self) -> int:
        return self.mean.shape[0]

    @property
    def position(self) -> np.ndarray:
        return self.mean[..., [0, 2]]

    def check(self, tol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless the covariance is symmetric PSD."""
        if self.mean.shape[-1] != STATE_DIM or self.cov.shape[-2:] != (STATE_DIM, STATE_DIM):
            raise ValueError(f"bad belief shapes {self.mean.shape}, {self.cov.shape}")
        scale = np.maximum(np.abs(self.cov).max(axis=(-1, -2)), 1.0)
        asym = np.abs(self.cov - np.swapaxes(self.cov, -1, -2)).max(axis=(-1, -2))
        if np.any(asym > tol * scale):
            raise ValueError("covariance not symmetric")
        eig = np.linalg.eigvalsh(symmetrize(self.cov))
        tr = np.trace(self.cov, axis1=-2, axis2=-1)
        if np.any(eig.min(axis=-1) < -tol * np.maximum(tr, 1.0)):
            raise ValueError("covariance not positive semi-definite")

    @staticmethod
    def stack(beliefs: Sequence["GaussianBelief"]) -> "GaussianBelief":
        return GaussianBelief(
            np.stack([b.mean for b in beliefs]), np.stack([b.cov for b in beliefs])
        )


@dataclass(frozen=True)
class LinearDynamics:
    F: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))

    @cached_property
    def Q_inv(self) -> np.ndarray:
        return inv_spd(self.Q, "Q")

    @cached_property
    def Q_logdet(self) -> float:
        return float(logdet_spd(self.Q, "Q"))


def constant_velocity(q_pos: float = 10.0, q_vel: float = 1.0, dt: float = 1.0) -> LinearDynamics:
    """Constant-velocity model with diagonal process noise, one scan per step."""
    block = np.array([[1.0, dt], [0.0, 1.0]])
    F = np.zeros((STATE_DIM, STATE_DIM))
    F[:2, :2] = block
    F[2:, 2:] = block
    Q = np.diag([q_pos, q_vel, q_pos, q_vel])
    return LinearDynamics(F, Q)


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle in meters."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @classmethod
    def square(cls, side: float) -> "Region":
        return cls(0.0, float(side), 0.0, float(side))


POSITION_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class SensorModel:
    H: np.ndarray
    R: np.ndarray
    detect_prob: float
    region: Region
    clutter_rate: float

    def __post_init__(self):
        object.__setattr__(self, "H", np.asarray(self.H, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ConfigurationError(f"detect_prob must lie in [0, 1], got {self.detect_prob}")
        if self.clutter_rate < 0:
            raise ConfigurationError(f"clutter_rate must be >= 0, got {self.clutter_rate}")

    @property
    def clutter_active(self) -> bool:
        """Whether the tracker models a clutter component at all."""
        return self.clutter_rate > 0

    @cached_property
    def R_inv(self) -> np.ndarray:
        return inv_spd(self.R, "R")

    @cached_property
    def R_logdet(self) -> float:
        return float(logdet_spd(self.R, "R"))

    @cached_property
    def HtRinvH(self) -> np.ndarray:
        return self.H.T @ self.R_inv @ self.H

    @cached_property
    def HtRinv(self) -> np.ndarray:
        return self.H.T @ self.R_inv


def position_sensor(
    noise_var: float,
    region: Region,
    detect_prob: float = 0.9,
    clutter_rate: float = 0.0,
) -> SensorModel:
    """Position-only sensor with isotropic noise.

    A zero noise variance is clamped to ``MIN_NOISE_VAR`` so that ``R`` stays
    invertible.
    """
    if noise_var < 0:
        raise ConfigurationError(f"noise variance must be >= 0, got {noise_var}")
    var = max(float(noise_var), MIN_NOISE_VAR)
    return SensorModel(POSITION_H.copy(), var * np.eye(MEAS_DIM), detect_prob, region, clutter_rate)


@dataclass(frozen=True)
class Measurement:
    value: np.ndarray
    origin_label: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))


@dataclass(frozen=True)
class Scan:
    t: int
    measurements: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))

    def __len__(self) -> int:
        return len(self.measurements)

    @cached_property
    def values(self) -> np.ndarray:
        """Measurement positions as an ``(M, 2)`` array."""
        if not self.measurements:
            return np.zeros((0, MEAS_DIM))
        return np.stack([m.value for m in self.measurements])

    @property
    def labels(self) -> list:
        return [m.origin_label for m in self.measurements]


def as_points(z) -> np.ndarray:
    """Coerce a Scan, Measurement, sequence of those, or array to ``(M, 2)``."""
    if isinstance(z, Scan):
        return z.values
    if isinstance(z, Measurement):
        return z.value[None, :]
    if isinstance(z, (list, tuple)) and z and isinstance(z[0], Measurement):
        return np.stack([m.value for m in z])
    arr = np.asarray(z, dtype=float)
    return arr.reshape(-1, MEAS_DIM)


def gaussian_log_density(x, mean, cov) -> float:
    """Log of the multivariate normal density ``N(x | mean, cov)``."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = x.shape[-1]
    if mean.shape[-1] != d or cov.shape[-2:] != (d, d):
        raise ValueError(f"dimension mismatch: x {x.shape}, mean {mean.shape}, cov {cov.shape}")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularModelError("cov", "covariance is not positive definite") from None
    diff = x - mean
    white = np.linalg.solve(chol, diff[..., None])[..., 0]
    maha = np.sum(white * white, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    out = -0.5 * d * LOG_2PI - 0.5 * logdet - 0.5 * maha
    return float(out) if np.ndim(out) == 0 else out


def clutter_log_density(sensor: SensorModel) -> float:
    """Log of the uniform clutter density over the surveillance region."""
    area = sensor.region.area
    if not area > 0:
        raise ConfigurationError(f"surveillance region must have positive area, got {area}")
    return -float(np.log(area))
