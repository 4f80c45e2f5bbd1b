"""Variational PMHT: variational Bayesian EM over associations, mixing
weights and target states.

The factorized posterior is ``q(L) q(pi) q(X)``:

* ``q(L)`` is a categorical per measurement (the responsibilities),
* ``q(pi_t)`` is a Dirichlet per scan over targets plus clutter,
* ``q(X)`` is, per target, the Gaussian trajectory posterior obtained by a
  responsibility-weighted information filter followed by RTS smoothing.

Each coordinate update is exact, so the evidence lower bound never decreases
from one iteration to the next.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import digamma, gammaln

from . import kalman
from ._window import PackedWindow, mahalanobis_matrix, pack_window, row_softmax
from .kalman import SmootherCache
from .models import (
    LOG_2PI,
    MEAS_DIM,
    STATE_DIM,
    GaussianBelief,
    LinearDynamics,
    Scan,
    SensorModel,
    as_points,
    clutter_log_density,
    logdet_spd,
    inv_spd,
)
from .pmht import TrackerConfig, _stack_init


@dataclass
class DirichletWeights:
    """Dirichlet concentrations over ``N + 1`` components, clutter last.

    ``alpha`` may be ``(K,)`` or ``(T, K)``. With ``clutter_active`` false the
    clutter entry stays at ``alpha0`` and is excluded from every expectation.
    """

    alpha: np.ndarray
    alpha0: float
    clutter_active: bool = True

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)

    @property
    def active(self) -> np.ndarray:
        mask = np.ones(self.alpha.shape[-1], dtype=bool)
        if not self.clutter_active:
            mask[-1] = False
        return mask

    @property
    def total(self) -> np.ndarray:
        return np.sum(self.alpha, axis=-1, where=self.active)


@dataclass
class ResponsibilityMatrix:
    """Responsibilities ``r[j, i]`` of one scan; last column is clutter."""

    r: np.ndarray
    degenerate_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def mass(self) -> np.ndarray:
        return self.r.sum(axis=0)


def expected_log_pi(weights: DirichletWeights) -> np.ndarray:
    """``E[ln pi_i] = digamma(alpha_i) - digamma(sum(alpha))``."""
    alpha = weights.alpha
    if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
        raise ValueError("Dirichlet concentrations must be positive and finite")
    out = digamma(alpha) - digamma(weights.total)[..., None]
    if not weights.clutter_active:
        out[..., -1] = -np.inf
    return out


def expected_quadratic(belief: GaussianBelief, z, sensor: SensorModel):
    """``E[(Hx - z)^T R^-1 (Hx - z)]`` under the Gaussian ``belief``."""
    z = np.asarray(getattr(z, "value", z), dtype=float)
    diff = belief.mean @ sensor.H.T - z
    maha = np.einsum("...i,ij,...j->...", diff, sensor.R_inv, diff)
    trace = np.einsum("ij,...ji->...", sensor.HtRinvH, belief.cov)
    return maha + trace


def _trace_term(cov: np.ndarray, sensor: SensorModel) -> np.ndarray:
    return np.einsum("ij,...ji->...", sensor.HtRinvH, cov)


def _expected_loglik(Z, beliefs: GaussianBelief, sensor: SensorModel, clutter_active: bool):
    """``E_q(X)[ln p(z_j | component i)]`` as ``(..., M, N + 1)``."""
    const = -0.5 * MEAS_DIM * LOG_2PI - 0.5 * sensor.R_logdet
    quad = mahalanobis_matrix(Z, beliefs.position, sensor.R_inv)
    quad = quad + _trace_term(beliefs.cov, sensor)[..., None, :]
    tgt = const - 0.5 * quad
    clu_val = clutter_log_density(sensor) if clutter_active else -np.inf
    clu = np.full(tgt.shape[:-1] + (1,), clu_val)
    return np.concatenate([tgt, clu], axis=-1)


def _log_pi_for_rho(weights: DirichletWeights, clutter_rho: str) -> np.ndarray:
    e = expected_log_pi(weights)
    if clutter_rho == "point" and weights.clutter_active:
        e[..., -1] = np.log(weights.alpha[..., -1] / weights.total)
    return e


def log_rho(
    scan,
    beliefs: GaussianBelief,
    weights: DirichletWeights,
    sensor: SensorModel,
    clutter_rho: str = "expected",
) -> np.ndarray:
    """Unnormalized log responsibilities, shape ``(M, N + 1)``.

    Target columns combine ``E[ln pi_i]`` with the expected Gaussian
    log-likelihood; the clutter column is ``E[ln pi_clutter] - ln(area)``
    (``clutter_rho="point"`` uses the log Dirichlet mean instead).
    """
    beliefs = _stack_init(beliefs)
    Z = as_points(scan)
    ll = _expected_loglik(Z, beliefs, sensor, weights.clutter_active)
    return ll + _log_pi_for_rho(weights, clutter_rho)[..., None, :]


def responsibilities(log_rho_matrix) -> ResponsibilityMatrix:
    """Row-wise softmax of ``log_rho``; all ``-inf`` rows become uniform."""
    r, bad = row_softmax(np.asarray(log_rho_matrix, dtype=float))
    return ResponsibilityMatrix(r, bad)


def dirichlet_update(r, alpha0: float, clutter_active: bool = True) -> DirichletWeights:
    """Posterior concentrations ``alpha_i = alpha0 + sum_j r[j, i]``."""
    r = getattr(r, "r", r)
    r = np.asarray(r, dtype=float)
    return DirichletWeights(alpha0 + r.sum(axis=-2), alpha0, clutter_active)


def pi_point_estimate(weights: DirichletWeights, n_mes: Optional[int] = None) -> np.ndarray:
    """Dirichlet mean ``alpha_i / sum(alpha)`` over the active components."""
    total = weights.total
    if n_mes is not None:
        k = int(weights.active.sum())
        expect = k * weights.alpha0 + n_mes
        assert np.allclose(total, expect, rtol=1e-9), "alpha total inconsistent with n_mes"
    pi = weights.alpha / total[..., None]
    if not weights.clutter_active:
        pi[..., -1] = 0.0
    return pi


def _dirichlet_terms(weights: DirichletWeights, e_log_pi: np.ndarray) -> float:
    """``E[ln p(pi)] - E[ln q(pi)]`` summed over scans."""
    act = weights.active
    k = int(act.sum())
    a0 = weights.alpha0
    alpha = weights.alpha[..., act]
    e = e_log_pi[..., act]
    log_p = gammaln(k * a0) - k * gammaln(a0) + (a0 - 1.0) * e.sum(axis=-1)
    log_q = gammaln(alpha.sum(axis=-1)) - gammaln(alpha).sum(axis=-1) + ((alpha - 1.0) * e).sum(axis=-1)
    return float(np.sum(log_p - log_q))


def _gaussian_terms(cache: SmootherCache) -> float:
    """``E[ln p(X)] - E[ln q(X)]`` summed over targets.

    ``q(X)`` is the joint Gaussian over the window implied by the smoother;
    its entropy is accumulated through the backward conditionals
    ``q(x_t | x_{t+1})``.
    """
    dyn = cache.dyn
    F = dyn.F
    n = STATE_DIM
    sm = cache.smoothed
    prior = cache.predicted[0]
    T = cache.n_scans

    P0_inv = inv_spd(prior.cov, "window prior covariance")
    d0 = sm.mean[0] - prior.mean
    quad0 = np.einsum("...i,...ij,...j->...", d0, P0_inv, d0)
    tr0 = np.einsum("...ij,...ji->...", P0_inv, sm.cov[0])
    total = np.sum(-0.5 * n * LOG_2PI - 0.5 * logdet_spd(prior.cov, "window prior covariance") - 0.5 * (quad0 + tr0))

    if T > 1:
        G = cache.gains
        P_next = sm.cov[1:]
        cross = G @ P_next
        e = sm.mean[1:] - sm.mean[:-1] @ F.T
        M = (
            e[..., :, None] * e[..., None, :]
            + P_next
            - F @ cross
            - np.swapaxes(F @ cross, -1, -2)
            + F @ sm.cov[:-1] @ F.T
        )
        trans = -0.5 * n * LOG_2PI - 0.5 * dyn.Q_logdet - 0.5 * np.einsum("ij,...ji->...", dyn.Q_inv, M)
        total += np.sum(trans)

        cond = cache.filtered.cov[:-1] - G @ cache.predicted.cov[1:] @ np.swapaxes(G, -1, -2)
        entropy = 0.5 * n * (1.0 + LOG_2PI) + 0.5 * logdet_spd(cond, "backward conditional covariance")
        total += np.sum(entropy)
    entropy_last = 0.5 * n * (1.0 + LOG_2PI) + 0.5 * logdet_spd(sm.cov[-1], "smoothed covariance")
    total += np.sum(entropy_last)
    return float(total)


def _assignment_terms(r: np.ndarray, ll: np.ndarray, e_log_pi: np.ndarray, mask: np.ndarray) -> float:
    """``E[ln p(Z|L,X)] + E[ln p(L|pi)] - E[ln q(L)]`` over padded scans."""
    keep = (r > 0) & mask[..., None]
    score = ll + e_log_pi[..., None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(keep, r * (score - np.log(np.where(keep, r, 1.0))), 0.0)
    return float(contrib.sum())


def _elbo_packed(packed: PackedWindow, cache: SmootherCache, r: np.ndarray, weights: DirichletWeights, sensor: SensorModel, ll=None) -> float:
    if ll is None:
        ll = _expected_loglik(packed.Z, cache.smoothed, sensor, weights.clutter_active)
    e = expected_log_pi(weights)
    return _assignment_terms(r, ll, e, packed.mask) + _dirichlet_terms(weights, e) + _gaussian_terms(cache)


def _pad_resp(resp, packed: PackedWindow, k: int) -> np.ndarray:
    out = np.zeros(packed.mask.shape + (k,))
    for t, rm in enumerate(resp):
        r = np.asarray(getattr(rm, "r", rm), dtype=float)
        out[t, : r.shape[0]] = r
    return out


def elbo(
    window: Sequence[Scan],
    cache: SmootherCache,
    resp,
    weights: DirichletWeights,
    sensor: SensorModel,
    dyn: Optional[LinearDynamics] = None,
) -> float:
    """Evidence lower bound of the factorized posterior over a window.

    Parameters
    ----------
    window : sequence of Scan
    cache : SmootherCache
        Defines ``q(X)``; ``cache.predicted[0]`` is the prior on the first scan.
    resp : sequence of ResponsibilityMatrix or arrays
        ``q(L)`` per scan.
    weights : DirichletWeights
        ``q(pi)`` with ``alpha`` of shape ``(T, N + 1)``.
    sensor : SensorModel
    dyn : LinearDynamics, optional
        Defaults to ``cache.dyn``.
    """
    if dyn is not None and dyn is not cache.dyn:
        cache = SmootherCache(cache.filtered, cache.predicted, cache.smoothed, cache.gains, dyn)
    packed = pack_window(window)
    r = _pad_resp(resp, packed, weights.alpha.shape[-1])
    return _elbo_packed(packed, cache, r, weights, sensor)


@dataclass
class VpmhtResult:
    """Output of :func:`vpmht_batch_iterate`.

    ``smoothed`` and ``filtered`` are ``(T, N)`` batched beliefs; ``mass`` is
    the responsibility column sum per scan and target.
    """

    smoothed: GaussianBelief
    elbo_trace: List[float]
    weights: DirichletWeights
    responsibilities: List[ResponsibilityMatrix]
    iterations: int = 0
    converged: bool = False
    filtered: Optional[GaussianBelief] = None
    cache: Optional[SmootherCache] = None
    mass: Optional[np.ndarray] = None
    degenerate_rows: int = 0


def _info_forward(sensor, mass, zsum):
    def update(t, pred):
        return kalman.info_update(pred, mass[t], zsum[t], sensor)

    return update


def forward_mstep(prior: GaussianBelief, scan, resp, sensor: SensorModel) -> GaussianBelief:
    """Fuse one scan into every target's predicted belief using ``resp``."""
    r = np.asarray(getattr(resp, "r", resp), dtype=float)
    n = prior.mean.shape[0]
    return kalman.weighted_info_update(prior, scan, r[:, :n], sensor)


def vpmht_batch_iterate(
    window: Sequence[Scan],
    init,
    cfg: TrackerConfig,
    dyn: LinearDynamics,
    sensor: SensorModel,
    init_traj: Optional[GaussianBelief] = None,
) -> VpmhtResult:
    """Variational Bayesian EM over a window of scans.

    ``init`` is the prior on each target's state at the first scan. Every
    iteration runs the E-step (responsibilities from the current ``q(pi)``
    and smoothed ``q(X)``), the Dirichlet update, the weighted information
    filter and the RTS smoother, then evaluates the ELBO. Iteration stops once
    the ELBO gain falls below ``cfg.delta_terminate``. ``init_traj`` seeds
    ``q(X)`` for the first E-step; by default the prior is propagated.
    """
    prior = _stack_init(init)
    n_tar = prior.mean.shape[0]
    packed = pack_window(window)
    T = packed.n_scans
    if T == 0:
        raise ValueError("empty window")
    k = n_tar + 1
    clutter = sensor.clutter_active
    weights = DirichletWeights(np.full((T, k), cfg.alpha0), cfg.alpha0, clutter)
    smoothed = kalman.initial_trajectory(prior, T, dyn, init_traj)
    result = VpmhtResult(
        smoothed=smoothed,
        elbo_trace=[],
        weights=weights,
        responsibilities=[ResponsibilityMatrix(np.zeros((c, k))) for c in packed.counts],
        filtered=smoothed,
        mass=np.zeros((T, n_tar)),
    )
    if cfg.max_iters == 0 or n_tar == 0:
        result.converged = n_tar == 0
        return result

    mask = packed.mask
    ll = _expected_loglik(packed.Z, smoothed, sensor, clutter)
    for it in range(1, cfg.max_iters + 1):
        logits = ll + _log_pi_for_rho(weights, cfg.clutter_rho)[:, None, :]
        r, bad = row_softmax(logits)
        r = np.where(mask[..., None], r, 0.0)
        result.degenerate_rows += int(np.sum(bad & mask))
        s = r.sum(axis=1)
        weights = DirichletWeights(cfg.alpha0 + s, cfg.alpha0, clutter)
        mass = s[:, :n_tar]
        zsum = np.einsum("tmi,tmd->tid", r[..., :n_tar], packed.Z)

        cache = kalman.filter_smooth(prior, T, _info_forward(sensor, mass, zsum), dyn)
        ll = _expected_loglik(packed.Z, cache.smoothed, sensor, clutter)
        value = _elbo_packed(packed, cache, r, weights, sensor, ll=ll)

        result.elbo_trace.append(value)
        result.iterations = it
        result.weights = weights
        result.cache = cache
        result.smoothed = cache.smoothed
        result.filtered = cache.filtered
        result.mass = mass
        if it > 1 and result.elbo_trace[-1] - result.elbo_trace[-2] < cfg.delta_terminate:
            result.converged = True
            break
    result.responsibilities = [
        ResponsibilityMatrix(r[t, : packed.counts[t]], bad[t, : packed.counts[t]]) for t in range(T)
    ]
    return result
