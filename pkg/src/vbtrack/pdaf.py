"""Probabilistic data association filter, one independent filter per target.

Parametric clutter model: the clutter spatial density enters through
``b = lambda * (1 - P_D P_G) / P_D``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .kalman import predict
from .models import (
    LOG_2PI,
    MEAS_DIM,
    ConfigurationError,
    GaussianBelief,
    SensorModel,
    as_points,
    LinearDynamics,
    constant_velocity,
    inv_spd,
    logdet_spd,
    symmetrize,
)


@dataclass(frozen=True)
class PdafConfig:
    gate_prob: float = 0.99
    detect_prob: float = 0.9
    clutter_density: float = 0.0

    def __post_init__(self):
        for name in ("gate_prob", "detect_prob"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1], got {v}")
        if self.clutter_density < 0:
            raise ConfigurationError("clutter_density must be >= 0")

    @classmethod
    def from_sensor(cls, sensor: SensorModel, gate_prob: float = 0.99) -> "PdafConfig":
        return cls(gate_prob, sensor.detect_prob, sensor.clutter_rate / sensor.region.area)

    @property
    def gate_threshold(self) -> float:
        if self.gate_prob >= 1.0:
            return np.inf
        return float(chi2.ppf(self.gate_prob, MEAS_DIM))


def pdaf_update(predicted: GaussianBelief, scan, sensor: SensorModel, cfg: PdafConfig):
    """PDA measurement update of (batched) predicted beliefs.

    Returns the posterior and the number of gated measurements per target.
    """
    Z = as_points(scan)
    x, P = predicted.mean, predicted.cov
    H = sensor.H
    PHt = P @ H.T
    S = symmetrize(H @ PHt + sensor.R)
    S_inv = inv_spd(S, "innovation covariance")
    K = PHt @ S_inv

    nu = Z[..., None, :, :] - (x @ H.T)[..., None, :] if Z.size else np.zeros(x.shape[:-1] + (0, MEAS_DIM))
    d2 = np.einsum("...mi,...ij,...mj->...m", nu, S_inv, nu)
    gated = d2 <= cfg.gate_threshold
    n_gated = gated.sum(axis=-1)

    log_norm = -0.5 * MEAS_DIM * LOG_2PI - 0.5 * logdet_spd(S, "innovation covariance")
    e = np.where(gated, np.exp(log_norm[..., None] - 0.5 * d2), 0.0)
    pg = 1.0 if np.isinf(cfg.gate_threshold) else cfg.gate_prob
    b = cfg.clutter_density * (1.0 - cfg.detect_prob * pg) / cfg.detect_prob
    denom = b + e.sum(axis=-1)
    empty = denom <= 0
    denom_safe = np.where(empty, 1.0, denom)
    beta = e / denom_safe[..., None]
    beta0 = np.where(empty, 1.0, b / denom_safe)

    nu_c = np.einsum("...m,...mi->...i", beta, nu)
    mean = x + (K @ nu_c[..., None])[..., 0]
    P_c = P - K @ S @ np.swapaxes(K, -1, -2)
    spread_inner = np.einsum("...m,...mi,...mj->...ij", beta, nu, nu) - nu_c[..., :, None] * nu_c[..., None, :]
    spread = K @ spread_inner @ np.swapaxes(K, -1, -2)
    b0 = beta0[..., None, None]
    cov = b0 * P + (1.0 - b0) * P_c + spread
    return GaussianBelief(mean, symmetrize(cov)), n_gated


def pdaf_step(
    belief: GaussianBelief,
    scan,
    sensor: SensorModel,
    cfg: PdafConfig,
    dyn: LinearDynamics = None,
) -> GaussianBelief:
    """Predict ``belief`` one scan ahead and apply the PDA update.

    ``dyn`` defaults to the constant-velocity model used by the simulator.
    """
    dyn = dyn or constant_velocity()
    return pdaf_update(predict(belief, dyn), scan, sensor, cfg)[0]
