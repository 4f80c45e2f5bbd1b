"""Reference computations written independently of the package.

Everything here uses explicit inverses, dense joint covariances or brute
force, trading speed for transparency.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

H_POS = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])


def cv_matrices(q_pos=10.0, q_vel=1.0):
    F = np.array([[1.0, 1, 0, 0], [0, 1, 0, 0], [0, 0, 1, 1], [0, 0, 0, 1]])
    return F, np.diag([q_pos, q_vel, q_pos, q_vel])


def random_spd(rng, n, scale=1.0, floor=0.1):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T / n + floor * np.eye(n))


def gaussian_logpdf(x, mean, cov):
    x, mean, cov = (np.asarray(a, dtype=float) for a in (x, mean, cov))
    d = x - mean
    k = len(d)
    return -0.5 * k * math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(cov)) - 0.5 * d @ np.linalg.inv(cov) @ d


def joseph_update(x, P, z, H, R):
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    I_KH = np.eye(len(x)) - K @ H
    return x + K @ (z - H @ x), I_KH @ P @ I_KH.T + K @ R @ K.T


def stacked_update(x, P, Z, H, R):
    """Fuse all rows of ``Z`` at once with a block-diagonal noise model."""
    m = len(Z)
    Hs = np.vstack([H] * m)
    Rs = np.kron(np.eye(m), R)
    return joseph_update(x, P, np.concatenate(Z), Hs, Rs)


def joint_smoother(x0, P0, F, Q, H, R, zs):
    """Smoothed marginals by conditioning the full joint Gaussian.

    ``zs[t]`` is an ``(m_t, 2)`` array of measurements at scan ``t``.
    """
    T = len(zs)
    n = len(x0)
    # state block: x_t = F^t x0 + sum_k F^(t-k) w_k
    A = [np.linalg.matrix_power(F, t) for t in range(T)]
    mean_x = np.concatenate([a @ x0 for a in A])
    cov_x = np.zeros((T * n, T * n))
    for s in range(T):
        for t in range(T):
            c = A[s] @ P0 @ A[t].T
            for k in range(1, min(s, t) + 1):
                c = c + np.linalg.matrix_power(F, s - k) @ Q @ np.linalg.matrix_power(F, t - k).T
            cov_x[s * n : (s + 1) * n, t * n : (t + 1) * n] = c
    rows = []
    noise = []
    zvec = []
    for t, z in enumerate(zs):
        for zj in np.atleast_2d(z):
            sel = np.zeros((H.shape[0], T * n))
            sel[:, t * n : (t + 1) * n] = H
            rows.append(sel)
            noise.append(R)
            zvec.append(zj)
    if not rows:
        return mean_x.reshape(T, n), np.array([cov_x[t * n : (t + 1) * n, t * n : (t + 1) * n] for t in range(T)])
    Hb = np.vstack(rows)
    Rb = np.zeros((len(noise) * 2, len(noise) * 2))
    for i, r in enumerate(noise):
        Rb[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = r
    S = Hb @ cov_x @ Hb.T + Rb
    K = cov_x @ Hb.T @ np.linalg.inv(S)
    post_mean = mean_x + K @ (np.concatenate(zvec) - Hb @ mean_x)
    post_cov = cov_x - K @ Hb @ cov_x
    means = post_mean.reshape(T, n)
    covs = np.array([post_cov[t * n : (t + 1) * n, t * n : (t + 1) * n] for t in range(T)])
    return means, covs


def log_evidence(x0, P0, F, Q, H, R, zs):
    """``ln p(z_0..z_{T-1})`` via the prediction-error decomposition (one measurement per scan)."""
    x, P = np.array(x0, float), np.array(P0, float)
    total = 0.0
    for t, z in enumerate(zs):
        if t > 0:
            x, P = F @ x, F @ P @ F.T + Q
        S = H @ P @ H.T + R
        total += gaussian_logpdf(z, H @ x, S)
        x, P = joseph_update(x, P, z, H, R)
    return total


def ospa_bruteforce(X, Y, c, p):
    X = [np.asarray(x, float) for x in X]
    Y = [np.asarray(y, float) for y in Y]
    if not X and not Y:
        return 0.0
    if len(X) > len(Y):
        X, Y = Y, X
    m, n = len(X), len(Y)
    if m == 0:
        return float(c)
    best = math.inf
    for perm in itertools.permutations(range(n), m):
        s = sum(min(np.linalg.norm(X[i] - Y[perm[i]]), c) ** p for i in range(m))
        best = min(best, s)
    return ((best + c**p * (n - m)) / n) ** (1.0 / p)


def softmax_mp(row):
    """Softmax with mpmath-free extended precision via Python floats and fsum."""
    row = [float(v) for v in row]
    finite = [v for v in row if v != -math.inf]
    peak = max(finite)
    e = [0.0 if v == -math.inf else math.exp(v - peak) for v in row]
    s = math.fsum(e)
    return [v / s for v in e]
