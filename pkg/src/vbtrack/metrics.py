"""OSPA distance, track-loss detection and summary statistics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .models import ConfigurationError


@dataclass(frozen=True)
class OspaParams:
    cutoff: float = 100.0
    order: float = 2.0

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ConfigurationError("OSPA cutoff must be > 0")
        if not self.order >= 1:
            raise ConfigurationError("OSPA order must be >= 1")


def assignment_solve(cost):
    """Minimum-cost assignment of rows to distinct columns.

    Rectangular inputs assign ``min(rows, cols)`` pairs. Returns
    ``((row_idx, col_idx), total_cost)``.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return (np.zeros(0, dtype=int), np.zeros(0, dtype=int)), 0.0
    rows, cols = linear_sum_assignment(cost)
    return (rows, cols), float(cost[rows, cols].sum())


def ospa(estimates, truth, params: OspaParams = OspaParams()) -> float:
    """OSPA distance between two finite sets of points."""
    X = np.asarray(estimates, dtype=float).reshape(-1, 2)
    Y = np.asarray(truth, dtype=float).reshape(-1, 2)
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    c, p = params.cutoff, params.order
    if m == 0 or n == 0:
        return c
    d = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
    d = np.minimum(d, c) ** p
    _, cost = assignment_solve(d)
    big = max(m, n)
    return float(((cost + c**p * abs(m - n)) / big) ** (1.0 / p))


@dataclass
class TrackStatus:
    """Per-target loss state, fed one scan at a time.

    ``lost[t, i]`` is true from the scan at which target ``i`` was declared
    lost onward; termination is final.
    """

    n_targets: int
    window: int = 3
    threshold: float = 0.5
    misses: np.ndarray = None
    lost_scan: np.ndarray = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.misses is None:
            self.misses = np.zeros(self.n_targets, dtype=int)
        if self.lost_scan is None:
            self.lost_scan = np.full(self.n_targets, -1, dtype=int)

    @property
    def active(self) -> np.ndarray:
        return self.lost_scan < 0

    def observe(self, t: int, weights) -> np.ndarray:
        """Record detection quantities for scan ``t``; returns newly lost targets.

        Entries for targets already lost are ignored (NaN is fine).
        """
        weights = np.asarray(weights, dtype=float)
        act = self.active
        below = np.zeros(self.n_targets, dtype=bool)
        below[act] = ~(weights[act] >= self.threshold)
        self.misses = np.where(below, self.misses + 1, 0)
        newly = act & (self.misses >= self.window)
        self.lost_scan[newly] = t
        self.history.append(~self.active)
        return np.flatnonzero(newly)

    @property
    def lost(self) -> np.ndarray:
        if not self.history:
            return np.zeros((0, self.n_targets), dtype=bool)
        return np.array(self.history)


def detect_track_loss(weight_history, threshold: float = 0.5, window: int = 3) -> TrackStatus:
    """Apply the consecutive-miss rule to a ``(n_targets, n_scans)`` history."""
    wh = np.atleast_2d(np.asarray(weight_history, dtype=float))
    status = TrackStatus(wh.shape[0], window, threshold)
    for t in range(wh.shape[1]):
        status.observe(t, wh[:, t])
    return status


def mean_and_stderr(values) -> tuple:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else float("nan")
    return float(v.mean()), float(se)
