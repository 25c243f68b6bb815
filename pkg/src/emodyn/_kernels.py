"""Numba kernels for the per-series filter/smoother inner loops.

These are hot: an EM fit runs the filter and smoother once per series per
cluster per iteration. The hand-rolled Cholesky/solve routines avoid LAPACK
call overhead on the small (7x7) matrices involved. Error conditions are
returned as status codes and raised by the Python wrappers in lgssm.

Status codes: 0 ok, 1 innovation covariance condition number over the
limit, 2 covariance factorization failed even with jitter.
"""

import numpy as np
from numba import njit

COND_LIMIT = 1e12


@njit(cache=True)
def _chol(a, L):
    """Lower Cholesky of a into L; returns False on a non-positive pivot."""
    n = a.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, n):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _chol_solve_vec(L, b, x):
    """Solve (L L^T) x = b in place via forward/back substitution."""
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]


@njit(cache=True)
def _chol_solve_mat(L, B, X):
    """Solve (L L^T) X = B column-wise; B is (n, m)."""
    n, m = B.shape
    for c in range(m):
        for i in range(n):
            s = B[i, c]
            for k in range(i):
                s -= L[i, k] * X[k, c]
            X[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = X[i, c]
            for k in range(i + 1, n):
                s -= L[k, i] * X[k, c]
            X[i, c] = s / L[i, i]


@njit(cache=True)
def _chol_with_jitter(S, L):
    """Cholesky with one trace-scaled jitter retry; returns False on failure."""
    if _chol(S, L):
        return True
    d = S.shape[0]
    tr = 0.0
    for i in range(d):
        tr += S[i, i]
    jitter = 1e-10 * max(tr / d, 1.0)
    Sj = S.copy()
    for i in range(d):
        Sj[i, i] += jitter
    return _chol(Sj, L)


@njit(cache=True)
def filter_pass(y, deltas, mu, A, C, P, Sigma, Gamma):
    """Kalman forward pass with Joseph-form updates.

    Returns (pred_means, pred_covs, filt_means, filt_covs, loglik,
    status, failed_step).
    """
    T, d_y = y.shape
    d_x = A.shape[0]
    I_x = np.eye(d_x)
    log_2pi = np.log(2.0 * np.pi)

    pred_m = np.empty((T, d_x))
    pred_V = np.empty((T, d_x, d_x))
    filt_m = np.empty((T, d_x))
    filt_V = np.empty((T, d_x, d_x))
    L = np.empty((d_y, d_y))
    alpha = np.empty(d_y)
    loglik = 0.0

    m = mu.copy()
    V = P.copy()
    for k in range(T):
        if k > 0:
            F = I_x + deltas[k] * A
            m = F @ m
            V = F @ V @ F.T + deltas[k] * Gamma
            V = 0.5 * (V + V.T)
        pred_m[k] = m
        pred_V[k] = V

        R = Sigma / deltas[k]
        S = C @ V @ C.T + R
        S = 0.5 * (S + S.T)
        eigs = np.linalg.eigvalsh(S)
        lo, hi = abs(eigs[0]), abs(eigs[-1])
        for e in eigs:
            a = abs(e)
            if a < lo:
                lo = a
            if a > hi:
                hi = a
        if lo == 0.0 or hi / lo > COND_LIMIT:
            return pred_m, pred_V, filt_m, filt_V, loglik, 1, k + 1
        if not _chol_with_jitter(S, L):
            return pred_m, pred_V, filt_m, filt_V, loglik, 2, k + 1

        innov = y[k] - C @ m
        _chol_solve_vec(L, innov, alpha)
        logdet = 0.0
        for i in range(d_y):
            logdet += np.log(L[i, i])
        quad = 0.0
        for i in range(d_y):
            quad += innov[i] * alpha[i]
        loglik += -0.5 * (d_y * log_2pi + 2.0 * logdet + quad)

        CV = C @ V  # (d_y, d_x)
        Kt = np.empty((d_y, d_x))
        _chol_solve_mat(L, CV, Kt)
        K = Kt.T  # V C^T S^{-1}
        m = m + K @ innov
        IKC = I_x - K @ C
        V = IKC @ V @ IKC.T + K @ R @ K.T
        V = 0.5 * (V + V.T)
        filt_m[k] = m
        filt_V[k] = V

    return pred_m, pred_V, filt_m, filt_V, loglik, 0, 0


@njit(cache=True)
def smoother_pass(deltas, A, pred_m, pred_V, filt_m, filt_V):
    """RTS backward pass; returns (means, covs, lag-one cross-covs, status, step)."""
    T, d_x = filt_m.shape
    I_x = np.eye(d_x)
    sm_m = filt_m.copy()
    sm_V = filt_V.copy()
    cross = np.empty((max(T - 1, 0), d_x, d_x))
    L = np.empty((d_x, d_x))
    Jt = np.empty((d_x, d_x))

    for k in range(T - 2, -1, -1):
        F = I_x + deltas[k + 1] * A
        Pp = pred_V[k + 1]
        if not _chol_with_jitter(Pp, L):
            return sm_m, sm_V, cross, 2, k + 2
        # J = filt_V[k] F^T Pp^{-1}
        _chol_solve_mat(L, F @ filt_V[k], Jt)
        J = Jt.T
        sm_m[k] = filt_m[k] + J @ (sm_m[k + 1] - pred_m[k + 1])
        Vk = filt_V[k] + J @ (sm_V[k + 1] - Pp) @ J.T
        sm_V[k] = 0.5 * (Vk + Vk.T)
        cross[k] = sm_V[k + 1] @ J.T

    return sm_m, sm_V, cross, 0, 0
