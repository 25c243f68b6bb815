"""EM clustering of time series with a mixture of gap-scaled LGSSMs.

Identity initialization, log-space E-step responsibilities, closed-form
M-step under the gap-scaled parameterization, convergence control, and model
JSON (de)serialization.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import lgssm
from .types import EMOTIONS, ClusterParameters, FittedMixture, TimeSeries

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    n_clusters: int = 2
    latent_dim: int = 7
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0
    min_weight: float = 1e-4
    threads: int = 1

    def __post_init__(self):
        if self.n_clusters < 1 or self.latent_dim < 1:
            raise ValueError("n_clusters and latent_dim must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


def initialize_identity(data: list, config: FitConfig) -> FittedMixture:
    """Identity initialization: every cluster starts at the global moments.

    C gets the identity in its leading block, A = 0, mu = global mean of
    first observations (zero-padded into the latent space), and P = Sigma =
    Gamma = identity scaled by the global per-dimension variance. Clusters
    are de-symmetrized by deterministic seed-derived perturbations of mu at
    relative magnitude 1e-2.
    """
    if not data:
        raise ValueError("empty data")
    d_y = data[0].dim
    if any(s.dim != d_y for s in data):
        raise ValueError("series have mixed observation dimensions")
    d_x, M = config.latent_dim, config.n_clusters
    if d_x < d_y:
        raise ValueError(f"latent_dim {d_x} < observation dimension {d_y}")

    first_obs = np.stack([s.observations[0] for s in data])
    all_obs = np.concatenate([s.observations for s in data])
    scale = float(np.mean(np.var(all_obs, axis=0)))
    if scale <= 0.0:
        scale = 1.0

    C = np.zeros((d_y, d_x))
    C[:, :d_y] = np.eye(d_y)
    mu = np.zeros(d_x)
    mu[:d_y] = first_obs.mean(axis=0)

    rng = np.random.default_rng(config.seed)
    clusters = []
    for l in range(M):
        mu_l = mu.copy()
        if M > 1:
            bump = rng.standard_normal(d_x)
            mu_l = mu + 1e-2 * max(np.max(np.abs(mu)), 1.0) * bump
        clusters.append(
            ClusterParameters(
                mu=mu_l,
                A=np.zeros((d_x, d_x)),
                C=C,
                P=scale * np.eye(d_x),
                Sigma=scale * np.eye(d_y),
                Gamma=scale * np.eye(d_x),
            )
        )

    N = len(data)
    resp = np.full((N, M), 1.0 / M)
    return FittedMixture(
        clusters=tuple(clusters),
        weights=np.full(M, 1.0 / M),
        responsibilities=resp,
        labels=np.zeros(N, dtype=int),
        loglik_trace=np.empty(0),
    )


def _series_smoothers(series: TimeSeries, clusters) -> tuple:
    """Per-cluster (log-likelihood, SmootherResult) for one series."""
    out = []
    for params in clusters:
        filt = lgssm.kalman_filter(series, params)
        sm = lgssm.rts_smoother(series, params, filt)
        out.append((filt.log_likelihood, sm))
    return tuple(out)


def e_step(data: list, model: FittedMixture, threads: int = 1):
    """Responsibilities from per-cluster likelihoods, normalized in log space.

    Returns (responsibilities, per-series tuple of per-cluster smoother
    results, total log-likelihood). Accumulation order over series is fixed,
    so the result is independent of the thread count.
    """
    clusters = model.clusters
    M = len(clusters)
    N = len(data)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_series = list(pool.map(lambda s: _series_smoothers(s, clusters), data))
    else:
        per_series = [_series_smoothers(s, clusters) for s in data]

    log_w = np.log(model.weights)
    logliks = np.array([[entry[l][0] for l in range(M)] for entry in per_series])
    joint = logliks + log_w
    totals = logsumexp(joint, axis=1)
    resp = np.exp(joint - totals[:, None])

    bad = ~np.isfinite(totals)
    if np.any(bad):
        logger.warning("likelihood underflow for %d series; uniform responsibilities assigned", int(bad.sum()))
        resp[bad] = 1.0 / M
        # Underflowed series contribute nothing to the total instead of -inf.
        totals = np.where(bad, 0.0, totals)

    smoothers = [tuple(entry[l][1] for l in range(M)) for entry in per_series]
    return resp, smoothers, float(np.sum(totals))


def m_step(data: list, responsibilities: np.ndarray, smoothers: list, config: FitConfig,
           previous: FittedMixture, frozen: set = frozenset()) -> FittedMixture:
    """Closed-form parameter updates under the gap-scaled parameterization.

    A solves the responsibility-weighted regression of latent increments on
    gap-weighted previous states; Gamma is the gap-normalized transition
    residual moment; C regresses observations on smoothed latents with gap
    weights; Sigma is the gap-weighted observation residual moment; mu and P
    are the weighted initial-state moments.
    """
    M = responsibilities.shape[1]
    d_x = config.latent_dim
    d_y = data[0].dim
    new_clusters = []
    weights = responsibilities.mean(axis=0)
    weights = np.maximum(weights, config.min_weight)
    weights = weights / weights.sum()

    for l in range(M):
        if l in frozen:
            new_clusters.append(previous.clusters[l])
            continue
        r = responsibilities[:, l]
        r_sum = float(r.sum())

        # Initial-state moments.
        mu = np.zeros(d_x)
        P = np.zeros((d_x, d_x))
        # Transition accumulators.
        S_dx = np.zeros((d_x, d_x))  # sum E[(x_k - x_{k-1}) x_{k-1}^T]
        S_xx_dt = np.zeros((d_x, d_x))  # sum delta_k E[x_{k-1} x_{k-1}^T]
        S_dd = np.zeros((d_x, d_x))  # sum (1/delta_k) E[d_k d_k^T]
        n_trans = 0.0
        # Observation accumulators.
        S_yx = np.zeros((d_y, d_x))  # sum delta_k y_k E[x_k]^T
        S_xx_obs = np.zeros((d_x, d_x))  # sum delta_k E[x_k x_k^T]
        S_yy = np.zeros((d_y, d_y))  # sum delta_k y_k y_k^T
        n_obs = 0.0

        for i, series in enumerate(data):
            if r[i] == 0.0:
                continue
            sm = smoothers[i][l]
            deltas = lgssm.step_deltas(series.timestamps)
            y = series.observations
            T = len(series)
            m = sm.smoothed_means
            # Second moments E[x_k x_k^T] and E[x_k x_{k-1}^T].
            Exx = sm.smoothed_covs + np.einsum("ki,kj->kij", m, m)
            mu += r[i] * m[0]
            P += r[i] * Exx[0]

            w_obs = r[i] * deltas
            S_yx += np.einsum("k,ki,kj->ij", w_obs, y, m)
            S_xx_obs += np.einsum("k,kij->ij", w_obs, Exx)
            S_yy += np.einsum("k,ki,kj->ij", w_obs, y, y)
            n_obs += r[i] * T

            if T > 1:
                Exp = sm.lag_one_crosscovs + np.einsum("ki,kj->kij", m[1:], m[:-1])
                d = deltas[1:]
                Edx = Exp - Exx[:-1]  # E[(x_k - x_{k-1}) x_{k-1}^T]
                S_dx += r[i] * Edx.sum(axis=0)
                S_xx_dt += r[i] * np.einsum("k,kij->ij", d, Exx[:-1])
                Edd = Exx[1:] - Exp - np.transpose(Exp, (0, 2, 1)) + Exx[:-1]
                S_dd += r[i] * np.einsum("k,kij->ij", 1.0 / d, Edd)
                n_trans += r[i] * (T - 1)

        mu /= r_sum
        P = P / r_sum - np.outer(mu, mu)
        P = 0.5 * (P + P.T)

        A = _solve_normal(S_xx_dt, S_dx, "transition regression")
        if n_trans > 0:
            Gamma = (S_dd - A @ S_dx.T - S_dx @ A.T + A @ S_xx_dt @ A.T) / n_trans
            Gamma = 0.5 * (Gamma + Gamma.T)
        else:
            Gamma = previous.clusters[l].Gamma.copy()

        C = _solve_normal(S_xx_obs, S_yx, "observation regression")
        Sigma = (S_yy - C @ S_yx.T - S_yx @ C.T + C @ S_xx_obs @ C.T) / n_obs
        Sigma = 0.5 * (Sigma + Sigma.T)

        new_clusters.append(ClusterParameters(mu=mu, A=A, C=C, P=P, Sigma=Sigma, Gamma=Gamma))

    labels = _argmax_labels(responsibilities)
    return FittedMixture(
        clusters=tuple(new_clusters),
        weights=weights,
        responsibilities=responsibilities,
        labels=labels,
        loglik_trace=previous.loglik_trace,
        frozen_clusters=tuple(sorted(frozen)),
    )


def _solve_normal(gram: np.ndarray, rhs: np.ndarray, context: str) -> np.ndarray:
    """Solve X @ gram = rhs for X, with one jittered retry on singularity."""
    try:
        return np.linalg.solve(gram.T, rhs.T).T
    except np.linalg.LinAlgError:
        d = gram.shape[0]
        jitter = 1e-8 * max(np.trace(gram) / d, 1.0)
        try:
            return np.linalg.solve(gram.T + jitter * np.eye(d), rhs.T).T
        except np.linalg.LinAlgError as exc:
            raise lgssm.InferenceError(f"singular normal matrix in {context}") from exc


def _argmax_labels(resp: np.ndarray) -> np.ndarray:
    # np.argmax already breaks ties toward the lower index.
    return np.argmax(resp, axis=1).astype(int)


def fit(data: list, config: FitConfig) -> FittedMixture:
    """Alternate E and M steps until the relative improvement drops below tol.

    Non-convergence is not an error: the returned model carries a converged
    flag. A cluster whose weight hits min_weight is frozen for the rest of
    the fit.
    """
    model = initialize_identity(data, config)
    trace = []
    frozen: set = set()
    converged = False
    resp = model.responsibilities

    for it in range(config.max_iters):
        resp, smoothers, loglik = e_step(data, model, threads=config.threads)
        trace.append(loglik)
        model = m_step(data, resp, smoothers, config, model, frozen)
        for l in range(config.n_clusters):
            if model.weights[l] <= config.min_weight and l not in frozen:
                frozen.add(l)
                logger.info("cluster %d weight hit the floor; freezing its parameters", l)
        if len(trace) > 1:
            if abs(trace[-1] - trace[-2]) / (1.0 + abs(trace[-1])) < config.tol:
                converged = True
                break

    return FittedMixture(
        clusters=model.clusters,
        weights=model.weights,
        responsibilities=resp,
        labels=_argmax_labels(resp),
        loglik_trace=np.array(trace),
        converged=converged,
        n_iters=len(trace),
        frozen_clusters=tuple(sorted(frozen)),
    )


def assign(data: list, model: FittedMixture, threads: int = 1):
    """Pure E-step followed by argmax; parameters are not modified."""
    resp, _, _ = e_step(data, model, threads=threads)
    return _argmax_labels(resp), resp


def model_to_dict(model: FittedMixture) -> dict:
    d_x = model.clusters[0].latent_dim
    d_y = model.clusters[0].obs_dim
    return {
        "version": MODEL_SCHEMA_VERSION,
        "M": model.n_clusters,
        "d_x": d_x,
        "d_y": d_y,
        "emotion_order": list(EMOTIONS),
        "weights": model.weights.tolist(),
        "clusters": [
            {
                "mu": c.mu.tolist(),
                "A": c.A.tolist(),
                "C": c.C.tolist(),
                "P": c.P.tolist(),
                "Sigma": c.Sigma.tolist(),
                "Gamma": c.Gamma.tolist(),
            }
            for c in model.clusters
        ],
        "fit": {
            "iters": int(model.n_iters),
            "converged": bool(model.converged),
            "loglik_trace": model.loglik_trace.tolist(),
            "frozen_clusters": list(model.frozen_clusters),
        },
    }


def save_model(model: FittedMixture, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path) -> FittedMixture:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {doc.get('version')!r}")
    clusters = tuple(
        ClusterParameters(
            mu=np.array(c["mu"]),
            A=np.array(c["A"]),
            C=np.array(c["C"]),
            P=np.array(c["P"]),
            Sigma=np.array(c["Sigma"]),
            Gamma=np.array(c["Gamma"]),
        )
        for c in doc["clusters"]
    )
    M = doc["M"]
    return FittedMixture(
        clusters=clusters,
        weights=np.array(doc["weights"]),
        responsibilities=np.zeros((0, M)),
        labels=np.zeros(0, dtype=int),
        loglik_trace=np.array(doc["fit"]["loglik_trace"]),
        converged=bool(doc["fit"]["converged"]),
        n_iters=int(doc["fit"]["iters"]),
        frozen_clusters=tuple(doc["fit"].get("frozen_clusters", ())),
    )
