"""Exact inference for one time-gap-scaled linear Gaussian state-space model.

Model over an irregular grid t_1 < ... < t_T with gaps delta_k = t_k - t_{k-1}:

    x_1 = mu + u,               u ~ N(0, P)
    x_k = (Id + delta_k A) x_{k-1} + w_k,   w_k ~ N(0, delta_k Gamma)
    y_k = C x_k + v_k,          v_k ~ N(0, Sigma / delta_k)

The first step uses delta_1 := 1 so the initial observation noise is Sigma
unscaled, matching the unscaled initial-state equation.

Provides the Kalman filter (Joseph-form update), the RTS smoother with
lag-one cross-covariances, noiseless rollout, and a dense joint-Gaussian
oracle used to verify the recursions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from . import _kernels
from .types import ClusterParameters, TimeSeries

_LOG_2PI = np.log(2.0 * np.pi)


class InferenceError(RuntimeError):
    """Numerical failure during filtering/smoothing (e.g. singular innovation)."""


def step_deltas(timestamps: np.ndarray) -> np.ndarray:
    """Per-step gaps with the delta_1 := 1 convention."""
    t = np.asarray(timestamps, dtype=float)
    if len(t) == 0:
        return np.empty(0)
    return np.concatenate(([1.0], np.diff(t)))


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class FilterResult:
    predicted_means: np.ndarray  # (T, d_x)
    predicted_covs: np.ndarray  # (T, d_x, d_x)
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    log_likelihood: float


@dataclass(frozen=True)
class SmootherResult:
    smoothed_means: np.ndarray  # (T, d_x)
    smoothed_covs: np.ndarray  # (T, d_x, d_x)
    lag_one_crosscovs: np.ndarray  # (T-1, d_x, d_x); entry k = Cov(x_{k+1}, x_k | Y)


def _check_dims(series: TimeSeries, params: ClusterParameters):
    if series.observations.shape[1] != params.obs_dim:
        raise ValueError(
            f"series dimension {series.observations.shape[1]} != "
            f"observation dimension {params.obs_dim}"
        )


def _raise_for_status(status: int, step: int):
    if status == 1:
        raise InferenceError(f"innovation covariance numerically singular at step {step}")
    if status == 2:
        raise InferenceError(f"covariance factorization failed at step {step}")


def kalman_filter(series: TimeSeries, params: ClusterParameters,
                  first_gap: float = 1.0) -> FilterResult:
    """Forward filtering pass; returns exact marginal log-likelihood.

    Joseph-form covariance updates keep the filtered covariances PSD under
    roundoff; every stored covariance is symmetrized. first_gap overrides
    the delta_1 := 1 convention (used by the scale-consistency tests).
    """
    _check_dims(series, params)
    deltas = step_deltas(series.timestamps)
    if len(deltas):
        deltas[0] = first_gap
    pred_m, pred_V, filt_m, filt_V, loglik, status, step = _kernels.filter_pass(
        np.ascontiguousarray(series.observations), deltas,
        np.ascontiguousarray(params.mu), np.ascontiguousarray(params.A),
        np.ascontiguousarray(params.C), np.ascontiguousarray(params.P),
        np.ascontiguousarray(params.Sigma), np.ascontiguousarray(params.Gamma))
    _raise_for_status(status, step)
    return FilterResult(pred_m, pred_V, filt_m, filt_V, float(loglik))


def rts_smoother(series: TimeSeries, params: ClusterParameters, filt: FilterResult) -> SmootherResult:
    """Backward Rauch-Tung-Striebel pass over a filter result."""
    _check_dims(series, params)
    deltas = step_deltas(series.timestamps)
    sm_m, sm_V, cross, status, step = _kernels.smoother_pass(
        deltas, np.ascontiguousarray(params.A),
        filt.predicted_means, filt.predicted_covs,
        filt.filtered_means, filt.filtered_covs)
    _raise_for_status(status, step)
    return SmootherResult(sm_m, sm_V, cross)


def noiseless_trajectory(params: ClusterParameters, grid) -> np.ndarray:
    """Deterministic rollout with all noise terms set to zero.

    x_1 = mu, x_k = (Id + delta_k A) x_{k-1}, y_k = C x_k.
    """
    t = np.asarray(grid, dtype=float)
    if len(t) == 0:
        raise ValueError("empty grid")
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        raise ValueError("grid not strictly increasing")
    I_x = np.eye(params.latent_dim)
    x = params.mu.copy()
    out = np.empty((len(t), params.obs_dim))
    out[0] = params.C @ x
    for k in range(1, len(t)):
        x = (I_x + (t[k] - t[k - 1]) * params.A) @ x
        out[k] = params.C @ x
    return out


def joint_gaussian_oracle(series: TimeSeries, params: ClusterParameters):
    """Brute-force reference: dense joint Gaussian over all latents and observations.

    Composes the model's linear recursions into one multivariate normal and
    reads off the observation marginal log-density and latent conditional
    means with dense linear algebra. No recursive filtering, so it serves as
    an independent oracle for the Kalman/RTS code. Test-scale only.
    """
    _check_dims(series, params)
    T = len(series)
    d_x, d_y = params.latent_dim, params.obs_dim
    if T * (d_x + d_y) > 200:
        raise ValueError("instance too large for the dense oracle (cap 200)")
    deltas = step_deltas(series.timestamps)
    A, C = params.A, params.C
    I_x = np.eye(d_x)

    # Latent joint: means and full covariance built from the recursion.
    means = np.empty((T, d_x))
    cov = np.zeros((T * d_x, T * d_x))
    means[0] = params.mu
    blocks = [[None] * T for _ in range(T)]
    blocks[0][0] = params.P.copy()
    for k in range(1, T):
        F = I_x + deltas[k] * A
        means[k] = F @ means[k - 1]
        for j in range(k):
            blocks[k][j] = F @ blocks[k - 1][j]
        blocks[k][k] = F @ blocks[k - 1][k - 1] @ F.T + deltas[k] * params.Gamma
    for k in range(T):
        for j in range(k + 1):
            b = blocks[k][j]
            cov[k * d_x:(k + 1) * d_x, j * d_x:(j + 1) * d_x] = b
            if j != k:
                cov[j * d_x:(j + 1) * d_x, k * d_x:(k + 1) * d_x] = b.T

    x_mean = means.reshape(-1)
    C_blk = np.kron(np.eye(T), C)
    R_blk = np.kron(np.diag(1.0 / deltas), params.Sigma)
    y_mean = C_blk @ x_mean
    S_yy = _sym(C_blk @ cov @ C_blk.T + R_blk)
    S_xy = cov @ C_blk.T
    y = series.observations.reshape(-1)

    L = sla.cholesky(S_yy, lower=True)
    resid = y - y_mean
    alpha = sla.cho_solve((L, True), resid)
    loglik = -0.5 * (len(y) * _LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + resid @ alpha)
    cond_means = (x_mean + S_xy @ alpha).reshape(T, d_x)
    return float(loglik), cond_means
