"""Padded window arrays and vectorized association helpers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import LOG_2PI, MEAS_DIM, Scan, SensorModel


@dataclass(frozen=True)
class PackedWindow:
    """Measurements of several scans padded to a common count.

    ``Z`` is ``(T, M, 2)``; ``mask[t, j]`` is true for real measurements.
    """

    Z: np.ndarray
    mask: np.ndarray
    counts: np.ndarray

    @property
    def n_scans(self) -> int:
        return self.Z.shape[0]


def pack_window(window: Sequence[Scan]) -> PackedWindow:
    counts = np.array([len(s) for s in window], dtype=int)
    m = int(counts.max()) if len(counts) else 0
    Z = np.zeros((len(window), m, MEAS_DIM))
    mask = np.zeros((len(window), m), dtype=bool)
    for t, scan in enumerate(window):
        n = counts[t]
        if n:
            Z[t, :n] = scan.values
            mask[t, :n] = True
    return PackedWindow(Z, mask, counts)


def mahalanobis_matrix(Z: np.ndarray, pos: np.ndarray, R_inv: np.ndarray) -> np.ndarray:
    """Squared distances ``(z - p)^T R^{-1} (z - p)``, shape ``(..., M, N)``.

    ``Z`` is ``(..., M, 2)`` and ``pos`` is ``(..., N, 2)``.
    """
    diff = Z[..., :, None, :] - pos[..., None, :, :]
    return np.einsum("...i,ij,...j->...", diff, R_inv, diff)


def gaussian_loglik_matrix(Z: np.ndarray, pos: np.ndarray, sensor: SensorModel) -> np.ndarray:
    const = -0.5 * MEAS_DIM * LOG_2PI - 0.5 * sensor.R_logdet
    return const - 0.5 * mahalanobis_matrix(Z, pos, sensor.R_inv)


def row_softmax(logits: np.ndarray):
    """Normalize ``exp(logits)`` along the last axis.

    Rows that are entirely ``-inf`` come back uniform; the boolean mask of
    those rows is returned alongside.
    """
    peak = logits.max(axis=-1, keepdims=True)
    bad = ~np.isfinite(peak[..., 0])
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(invalid="ignore"):
        e = np.exp(logits - peak)
    total = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, total, out=np.zeros_like(e), where=total > 0)
    if bad.any():
        out[bad] = 1.0 / logits.shape[-1]
    return out, bad
