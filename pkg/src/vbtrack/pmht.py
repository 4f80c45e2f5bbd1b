"""Probabilistic multi-hypothesis tracking by expectation-maximisation.

Each batch iteration computes association weights from point estimates,
re-estimates the per-scan mixing weights, forms one synthetic measurement per
target and scan, and runs a Kalman filter plus RTS smoother on them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kalman
from ._window import gaussian_loglik_matrix, pack_window, row_softmax
from .models import (
    ConfigurationError,
    GaussianBelief,
    LinearDynamics,
    Scan,
    SensorModel,
    as_points,
    clutter_log_density,
    gaussian_log_density,
)

log = logging.getLogger(__name__)

#: Below this expected measurement count a target gets no update.
MIN_MASS = 1e-12


@dataclass(frozen=True)
class TrackerConfig:
    """Settings shared by the batch trackers.

    ``alpha0`` and ``clutter_rho`` only affect the variational tracker.
    ``clutter_rho`` selects ``"expected"`` (digamma expectation of the clutter
    weight) or ``"point"`` (log of its Dirichlet mean).
    """

    batch_len: int = 3
    max_iters: int = 100
    delta_terminate: float = 1e-8
    clutter_in_estep: bool = True
    alpha0: float = 1.0
    clutter_rho: str = "expected"

    def __post_init__(self):
        if self.batch_len < 1:
            raise ConfigurationError("batch_len must be >= 1")
        if not self.delta_terminate > 0:
            raise ConfigurationError("delta_terminate must be > 0")
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be >= 0")
        if not self.alpha0 > 0:
            raise ConfigurationError("alpha0 must be > 0")
        if self.clutter_rho not in ("expected", "point"):
            raise ConfigurationError(f"unknown clutter_rho {self.clutter_rho!r}")


@dataclass
class PmhtState:
    """Result of one PMHT batch.

    ``pi`` is ``(T, N + 1)`` with the clutter weight last; ``mass`` is the
    expected number of measurements per target, ``n_t * pi``.
    """

    pi: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)
    converged: bool = False
    filtered: Optional[GaussianBelief] = None
    mass: Optional[np.ndarray] = None
    degenerate_rows: int = 0


def _stack_init(init) -> GaussianBelief:
    if isinstance(init, GaussianBelief):
        return init
    return GaussianBelief.stack(list(init))


def _clutter_enabled(sensor: SensorModel, clutter_in_estep: bool) -> bool:
    return clutter_in_estep and sensor.clutter_active


def initial_pi(n_targets: int, clutter: bool) -> np.ndarray:
    """Uniform mixing weights over the targets and, if modeled, clutter."""
    k = n_targets + 1
    pi = np.zeros(k)
    if clutter:
        pi[:] = 1.0 / k
    elif n_targets:
        pi[:n_targets] = 1.0 / n_targets
    else:
        pi[-1] = 1.0
    return pi


def _log_terms(Z, pos, pi, sensor, clutter):
    """Per-candidate log terms ``(..., M, N + 1)``."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    tgt = gaussian_loglik_matrix(Z, pos, sensor) + log_pi[..., None, :-1]
    if clutter:
        clu = log_pi[..., -1:] + clutter_log_density(sensor)
    else:
        clu = np.full(log_pi[..., -1:].shape, -np.inf)
    clu = np.broadcast_to(clu[..., None, :], tgt.shape[:-1] + (1,))
    return np.concatenate([tgt, clu], axis=-1)


def pmht_estep(
    scan: Scan,
    beliefs: GaussianBelief,
    pi,
    sensor: SensorModel,
    clutter_in_estep: bool = True,
) -> np.ndarray:
    """Association weights ``w[j, i]`` of measurement ``j`` to candidate ``i``.

    The last column is clutter; it is identically zero unless clutter is
    both requested and present in the sensor model.
    """
    beliefs = _stack_init(beliefs)
    Z = as_points(scan)
    pi = np.asarray(pi, dtype=float)
    logits = _log_terms(Z, beliefs.position, pi, sensor, _clutter_enabled(sensor, clutter_in_estep))
    w, bad = row_softmax(logits)
    if bad.any():
        log.debug("pmht_estep: %d underflowed rows assigned uniformly", int(bad.sum()))
    return w


def pmht_pi_update(w, prev: Optional[np.ndarray] = None) -> np.ndarray:
    """Mixing weights as the mean association weight over measurements."""
    w = np.asarray(w, dtype=float)
    if w.shape[0] == 0:
        if prev is None:
            raise ValueError("empty scan and no previous mixing weights")
        return np.asarray(prev, dtype=float).copy()
    return w.mean(axis=0)


def synthetic_measurement(w_col, scan, pi_i: float, sensor: SensorModel):
    """Weighted-average measurement and its scaled covariance for one target.

    Returns ``None`` when ``n_t * pi_i`` is below ``MIN_MASS``; the target then
    gets no update at this scan.
    """
    Z = as_points(scan)
    w_col = np.asarray(w_col, dtype=float)
    mass = len(Z) * float(pi_i)
    if mass < MIN_MASS:
        return None
    return (w_col @ Z) / mass, sensor.R / mass


def _means_by_scan(beliefs, n_scans):
    if isinstance(beliefs, GaussianBelief):
        return beliefs.mean
    return np.stack([_stack_init(b).mean for b in beliefs])


def pmht_likelihood(
    window: Sequence[Scan], beliefs, pi, sensor: SensorModel
) -> float:
    """Log of the measurement mixture likelihood over the window.

    ``beliefs`` holds per-scan target beliefs, ``(T, N)`` batched or a list;
    only the means enter. ``pi`` is ``(T, N + 1)``; a zero clutter weight
    removes the clutter term.
    """
    packed = pack_window(window)
    means = _means_by_scan(beliefs, packed.n_scans)
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    return _mixture_loglik(packed, means[..., [0, 2]], pi, sensor)


def _mixture_loglik(packed, pos, pi, sensor) -> float:
    if packed.Z.shape[1] == 0:
        return 0.0
    clutter = sensor.region.area > 0
    terms = _log_terms(packed.Z, pos, pi, sensor, clutter)
    peak = terms.max(axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        row = np.log(np.exp(terms - peak).sum(axis=-1)) + peak[..., 0]
    return float(np.sum(row, where=packed.mask))


def state_log_prior(means: np.ndarray, prior: GaussianBelief, dyn: LinearDynamics) -> float:
    """Log prior density of state trajectories ``means[t, i]``."""
    total = np.sum(gaussian_log_density(means[0], prior.mean, prior.cov))
    if means.shape[0] > 1:
        pred = means[:-1] @ dyn.F.T
        total += np.sum(gaussian_log_density(means[1:], pred, dyn.Q))
    return float(total)


def _forward_update(sensor, mass, zsum):
    def update(t, pred):
        s = mass[t]
        ok = s >= MIN_MASS
        if not ok.any():
            return pred
        s_safe = np.where(ok, s, 1.0)
        z_syn = zsum[t] / s_safe[:, None]
        R_syn = sensor.R[None] / s_safe[:, None, None]
        post = kalman.kf_update(pred, z_syn, sensor, noise=R_syn)
        return GaussianBelief(
            np.where(ok[:, None], post.mean, pred.mean),
            np.where(ok[:, None, None], post.cov, pred.cov),
        )

    return update


def pmht_batch_iterate(
    window: Sequence[Scan],
    init,
    cfg: TrackerConfig,
    dyn: LinearDynamics,
    sensor: SensorModel,
    pi_init: Optional[np.ndarray] = None,
    init_traj: Optional[GaussianBelief] = None,
):
    """Run PMHT EM iterations over a window of scans.

    Parameters
    ----------
    window : sequence of Scan
        Scans in time order.
    init : GaussianBelief or list of GaussianBelief
        Prior on each target's state at the first scan of the window.
    cfg : TrackerConfig
    dyn, sensor
        Motion and measurement models.
    pi_init : array, optional
        ``(T, N + 1)`` starting mixing weights; uniform by default.
    init_traj : GaussianBelief, optional
        ``(T, N)`` state estimates for the first E-step. Defaults to the
        prior propagated through the window.

    Returns
    -------
    smoothed : GaussianBelief
        Batched ``(T, N)`` smoothed beliefs from the final iteration.
    state : PmhtState
        ``trace`` holds the EM objective (mixture log-likelihood plus log
        state prior) after every iteration.
    """
    prior = _stack_init(init)
    n_tar = prior.mean.shape[0]
    packed = pack_window(window)
    T = packed.n_scans
    if T == 0:
        raise ValueError("empty window")
    clutter = _clutter_enabled(sensor, cfg.clutter_in_estep)
    if pi_init is None:
        pi = np.tile(initial_pi(n_tar, clutter), (T, 1))
    else:
        pi = np.array(pi_init, dtype=float)

    smoothed = kalman.initial_trajectory(prior, T, dyn, init_traj)
    state = PmhtState(pi=pi, iterations=0, mass=np.zeros((T, n_tar)))
    if cfg.max_iters == 0 or n_tar == 0:
        state.filtered = smoothed
        state.converged = n_tar == 0
        return smoothed, state

    mask = packed.mask[..., None]
    counts = packed.counts
    for it in range(1, cfg.max_iters + 1):
        logits = _log_terms(packed.Z, smoothed.position, pi, sensor, clutter)
        w, bad = row_softmax(logits)
        w = np.where(mask, w, 0.0)
        state.degenerate_rows += int(np.sum(bad & packed.mask))
        col = w.sum(axis=1)
        has = counts > 0
        pi = np.where(has[:, None], col / np.maximum(counts, 1)[:, None], pi)
        mass = col[:, :n_tar]
        zsum = np.einsum("tmi,tmd->tid", w[..., :n_tar], packed.Z)

        cache = kalman.filter_smooth(prior, T, _forward_update(sensor, mass, zsum), dyn)
        smoothed = cache.smoothed
        objective = _mixture_loglik(packed, smoothed.position, pi, sensor) + state_log_prior(
            smoothed.mean, prior, dyn
        )
        state.trace.append(objective)
        state.iterations = it
        state.filtered = cache.filtered
        state.mass = mass
        if it > 1 and abs(state.trace[-1] - state.trace[-2]) < cfg.delta_terminate:
            state.converged = True
            break
    state.pi = pi
    return smoothed, state
