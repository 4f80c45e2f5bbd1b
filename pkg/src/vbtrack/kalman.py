"""Kalman prediction, measurement updates and RTS smoothing.

All functions broadcast over leading belief dimensions, so a stack of
per-target beliefs is filtered in one call.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models import (
    GaussianBelief,
    LinearDynamics,
    SensorModel,
    as_points,
    inv_spd,
    solve,
    symmetrize,
)


def _t(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(m, -1, -2)


def predict(belief: GaussianBelief, dyn: LinearDynamics) -> GaussianBelief:
    F = dyn.F
    mean = belief.mean @ F.T
    cov = F @ belief.cov @ F.T + dyn.Q
    return GaussianBelief(mean, symmetrize(cov))


def kf_update(belief: GaussianBelief, z, sensor: SensorModel, noise=None) -> GaussianBelief:
    """Standard Kalman measurement update.

    Parameters
    ----------
    belief : GaussianBelief
        Predicted belief, possibly batched.
    z : array_like or Measurement
        Measurement position(s); broadcast against the belief batch.
    sensor : SensorModel
        Supplies ``H`` and, unless ``noise`` is given, ``R``.
    noise : array_like, optional
        Measurement covariance overriding ``sensor.R`` (may be batched, as
        for synthetic measurements).
    """
    H = sensor.H
    R = sensor.R if noise is None else np.asarray(noise, dtype=float)
    z = np.asarray(getattr(z, "value", z), dtype=float)
    x, P = belief.mean, belief.cov
    PHt = P @ H.T
    S = symmetrize(H @ PHt + R)
    K = _t(solve(S, _t(PHt), "innovation covariance"))
    innov = z - x @ H.T
    mean = x + (K @ innov[..., None])[..., 0]
    cov = P - K @ H @ P
    return GaussianBelief(mean, symmetrize(cov))


def info_update(
    prior: GaussianBelief, weight_sum, weighted_sum, sensor: SensorModel
) -> GaussianBelief:
    """Information-form update from weighted sufficient statistics.

    ``weight_sum`` is ``sum_j r_j`` and ``weighted_sum`` is ``sum_j r_j z_j``,
    with batch shapes matching the prior.
    """
    weight_sum = np.asarray(weight_sum, dtype=float)
    weighted_sum = np.asarray(weighted_sum, dtype=float)
    P_inv = inv_spd(prior.cov, "prior covariance")
    info = P_inv + weight_sum[..., None, None] * sensor.HtRinvH
    eta = (P_inv @ prior.mean[..., None])[..., 0] + weighted_sum @ sensor.HtRinv.T
    cov = inv_spd(info, "posterior information")
    mean = (cov @ eta[..., None])[..., 0]
    return GaussianBelief(mean, cov)


def weighted_info_update(prior: GaussianBelief, scan, r_col, sensor: SensorModel) -> GaussianBelief:
    """Fuse every measurement of ``scan`` with weights ``r_col``.

    ``r_col`` has shape ``(M,)`` for a single belief or ``(M, N)`` for a stack
    of ``N`` beliefs.
    """
    Z = as_points(scan)
    r = np.asarray(r_col, dtype=float)
    if r.shape[0] != Z.shape[0]:
        raise ValueError(f"{r.shape[0]} weights for {Z.shape[0]} measurements")
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("weights must lie in [0, 1]")
    return info_update(prior, r.sum(axis=0), r.T @ Z, sensor)


def rts_gain(filtered: GaussianBelief, predicted_next: GaussianBelief, dyn: LinearDynamics) -> np.ndarray:
    """Smoother gain ``P_{t|t} F^T P_{t+1|t}^{-1}``."""
    FP = dyn.F @ filtered.cov
    return _t(solve(predicted_next.cov, FP, "predicted covariance"))


def _rts(filtered, predicted_next, smoothed_next, dyn):
    G = rts_gain(filtered, predicted_next, dyn)
    dx = smoothed_next.mean - predicted_next.mean
    mean = filtered.mean + (G @ dx[..., None])[..., 0]
    cov = filtered.cov + G @ (smoothed_next.cov - predicted_next.cov) @ _t(G)
    return GaussianBelief(mean, symmetrize(cov)), G


def rts_smooth_step(
    filtered_t: GaussianBelief,
    predicted_t1: GaussianBelief,
    smoothed_t1: GaussianBelief,
    dyn: LinearDynamics,
) -> GaussianBelief:
    """One backward Rauch-Tung-Striebel step.

    ``predicted_t1`` must be ``predict(filtered_t, dyn)``; this is asserted
    (disabled under ``python -O``).
    """
    if __debug__:
        expect = predict(filtered_t, dyn)
        assert np.allclose(expect.mean, predicted_t1.mean, rtol=1e-8, atol=1e-8) and np.allclose(
            expect.cov, predicted_t1.cov, rtol=1e-8, atol=1e-8
        ), "predicted_t1 is not the prediction of filtered_t"
    return _rts(filtered_t, predicted_t1, smoothed_t1, dyn)[0]


@dataclass
class SmootherCache:
    """Forward/backward quantities over a window.

    Arrays are indexed ``[t, target, ...]``. ``predicted[0]`` is the prior
    on the first scan; ``gains[t]`` links scan ``t`` to ``t + 1``.
    """

    filtered: GaussianBelief
    predicted: GaussianBelief
    smoothed: GaussianBelief
    gains: np.ndarray
    dyn: LinearDynamics

    @property
    def n_scans(self) -> int:
        return self.filtered.mean.shape[0]


def filter_smooth(
    prior: GaussianBelief,
    n_scans: int,
    update: Callable[[int, GaussianBelief], GaussianBelief],
    dyn: LinearDynamics,
) -> SmootherCache:
    """Run a forward filter and RTS smoother over ``n_scans`` scans.

    ``prior`` is the belief on the first scan before its measurements;
    ``update(t, predicted)`` returns the filtered belief at scan ``t``.
    """
    means_p, covs_p, means_f, covs_f = [], [], [], []
    pred = prior
    for t in range(n_scans):
        if t > 0:
            pred = predict(GaussianBelief(means_f[-1], covs_f[-1]), dyn)
        filt = update(t, pred)
        means_p.append(pred.mean)
        covs_p.append(pred.cov)
        means_f.append(filt.mean)
        covs_f.append(filt.cov)
    predicted = GaussianBelief(np.stack(means_p), np.stack(covs_p))
    filtered = GaussianBelief(np.stack(means_f), np.stack(covs_f))

    sm_mean = filtered.mean.copy()
    sm_cov = filtered.cov.copy()
    gains = np.zeros((max(n_scans - 1, 0),) + filtered.cov.shape[1:])
    for t in range(n_scans - 2, -1, -1):
        sm, G = _rts(filtered[t], predicted[t + 1], GaussianBelief(sm_mean[t + 1], sm_cov[t + 1]), dyn)
        sm_mean[t] = sm.mean
        sm_cov[t] = sm.cov
        gains[t] = G
    return SmootherCache(filtered, predicted, GaussianBelief(sm_mean, sm_cov), gains, dyn)


def propagate(prior: GaussianBelief, n_scans: int, dyn: LinearDynamics) -> GaussianBelief:
    """Prior marginals over ``n_scans`` scans starting from ``prior``."""
    means, covs = [prior.mean], [prior.cov]
    b = prior
    for _ in range(n_scans - 1):
        b = predict(b, dyn)
        means.append(b.mean)
        covs.append(b.cov)
    return GaussianBelief(np.stack(means), np.stack(covs))


def shift_trajectory(traj: GaussianBelief, n_scans: int, dyn: LinearDynamics) -> GaussianBelief:
    """Drop the first scan of a ``(T, N)`` trajectory and extend it by prediction.

    Used to seed the next sliding window with the previous window's estimates.
    """
    out = traj[1 : n_scans + 1]
    last = traj[-1]
    while len(out) < n_scans:
        last = predict(last, dyn)
        out = GaussianBelief(
            np.concatenate([out.mean, last.mean[None]]), np.concatenate([out.cov, last.cov[None]])
        )
    return out


def initial_trajectory(prior: GaussianBelief, n_scans: int, dyn: LinearDynamics, init_traj=None) -> GaussianBelief:
    """Starting ``q(X)`` for a batch: ``init_traj`` if given, else the propagated prior."""
    if init_traj is None:
        return propagate(prior, n_scans, dyn)
    if init_traj.mean.shape[:2] != (n_scans,) + prior.mean.shape[:1]:
        raise ValueError(
            f"init_traj has shape {init_traj.mean.shape[:2]}, expected {(n_scans,) + prior.mean.shape[:1]}"
        )
    return init_traj
