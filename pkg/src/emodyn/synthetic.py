"""Ground-truth cohort generation from LGSSM mixtures.

Used by the recovery tests and the CLI `simulate` subcommand. Each series
draws its random stream from (seed, series index), so generation is
deterministic and independent of scheduling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .lgssm import step_deltas
from .types import N_EMOTIONS, ClusterParameters, TimeSeries


@dataclass(frozen=True)
class TimestampModel:
    """Per-series sampling-time model: count range plus inter-arrival law."""

    count_range: tuple = (25, 45)
    kind: str = "exponential"  # "exponential" | "fixed"
    mean_days: float = 2.3

    def __post_init__(self):
        lo, hi = self.count_range
        if lo < 1 or hi < lo:
            raise ValueError("count range must satisfy 1 <= lo <= hi")
        if self.kind not in ("exponential", "fixed"):
            raise ValueError(f"unknown inter-arrival kind {self.kind!r}")
        if self.mean_days <= 0:
            raise ValueError("mean_days must be > 0")


@dataclass(frozen=True)
class CohortSpec:
    clusters: tuple  # of ClusterParameters
    proportions: tuple
    n_series: int
    timestamps: TimestampModel = field(default_factory=TimestampModel)
    horizon_days: float = 84.0
    seed: int = 0
    clip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "proportions", tuple(float(p) for p in self.proportions))
        if abs(sum(self.proportions) - 1.0) > 1e-9:
            raise ValueError("proportions must sum to 1")
        if len(self.proportions) != len(self.clusters):
            raise ValueError("one proportion per cluster required")
        if self.horizon_days <= 0:
            raise ValueError("horizon must be > 0")
        if self.n_series < 1:
            raise ValueError("n_series must be >= 1")


def sample_timestamps(model: TimestampModel, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Strictly increasing timestamps starting at day 0, truncated at horizon."""
    lo, hi = model.count_range
    count = int(rng.integers(lo, hi + 1))
    if model.kind == "fixed":
        gaps = np.full(count - 1, model.mean_days)
    else:
        gaps = rng.exponential(model.mean_days, size=count - 1)
        gaps = np.maximum(gaps, 1e-9)
    t = np.concatenate(([0.0], np.cumsum(gaps)))
    return t[t <= horizon]


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Matrix square root of a PSD matrix (eigendecomposition, clipped)."""
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    if np.min(vals) < -1e-8 * max(np.max(np.abs(vals)), 1.0):
        raise ValueError("covariance not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None)) @ vecs.T


def sample_series(params: ClusterParameters, timestamps: np.ndarray,
                  rng: np.random.Generator, clip: bool = False,
                  patient_id: str = "sim") -> TimeSeries:
    """Ancestral sampling of the state-space model over the given grid."""
    t = np.asarray(timestamps, dtype=float)
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        raise ValueError("timestamps not strictly increasing")
    deltas = step_deltas(t)
    d_x, d_y = params.latent_dim, params.obs_dim
    sqP = _sqrt_psd(params.P)
    sqG = _sqrt_psd(params.Gamma)
    sqS = _sqrt_psd(params.Sigma)
    I_x = np.eye(d_x)

    obs = np.empty((len(t), d_y))
    x = params.mu + sqP @ rng.standard_normal(d_x)
    for k in range(len(t)):
        if k > 0:
            F = I_x + deltas[k] * params.A
            x = F @ x + np.sqrt(deltas[k]) * (sqG @ rng.standard_normal(d_x))
        v = (sqS @ rng.standard_normal(d_y)) / np.sqrt(deltas[k])
        obs[k] = params.C @ x + v
    if clip:
        obs = np.clip(obs, 0.0, 1.0)
    return TimeSeries(patient_id=patient_id, timestamps=t, observations=obs)


def sample_cohort(spec: CohortSpec):
    """Draw a full cohort; returns (series list, ground-truth labels)."""
    label_rng = np.random.default_rng([spec.seed, 0xC0404])
    labels = label_rng.choice(len(spec.clusters), size=spec.n_series, p=spec.proportions)
    series = []
    for i in range(spec.n_series):
        rng = np.random.default_rng([spec.seed, i])
        t = sample_timestamps(spec.timestamps, spec.horizon_days, rng)
        series.append(
            sample_series(spec.clusters[labels[i]], t, rng, clip=spec.clip,
                          patient_id=f"sim{i:05d}")
        )
    return series, labels.astype(int)


def _separated_pair(latent_dim: int = N_EMOTIONS):
    """Two well-separated clusters.

    Means differ by many pooled standard deviations in several channels and
    the A matrices differ in sign on both self-effects and cross-couplings.
    The sign differences put the separation in the trajectory shape (joy
    grows in cluster 0 and decays in cluster 1, negative emotions the other
    way around), which the initial-state covariance cannot absorb.
    """
    d = latent_dim
    base = np.full(d, 0.3)
    mu0 = base.copy()
    mu1 = base.copy()
    mu0[3] += 0.15           # joy high in cluster 0
    mu1[0] += 0.15           # anger/disgust/sadness high in cluster 1
    mu1[1] += 0.10
    mu1[5] += 0.10

    A0 = -0.025 * np.eye(d)
    A1 = -0.025 * np.eye(d)
    A0[3, 3] = 0.018         # joy grows in cluster 0, decays in cluster 1
    A1[3, 3] = -0.040
    A1[0, 0] = 0.018         # negative emotions grow in cluster 1
    A1[1, 1] = 0.014
    A1[5, 5] = 0.018
    A0[3, 6] = 0.008         # surprise feeds joy in cluster 0
    A1[3, 6] = -0.008
    A1[0, 5] = 0.008         # sadness feeds anger in cluster 1
    A0[0, 5] = -0.008

    C = np.eye(N_EMOTIONS, d)
    noise = 2e-3
    common = dict(C=C, P=noise * np.eye(d), Sigma=noise * np.eye(N_EMOTIONS),
                  Gamma=1e-4 * np.eye(d))
    return (
        ClusterParameters(mu=mu0, A=A0, **common),
        ClusterParameters(mu=mu1, A=A1, **common),
    )


def well_separated_spec(n_series: int = 200, seed: int = 0, latent_dim: int = N_EMOTIONS) -> CohortSpec:
    """Known-recoverable two-cluster regime for acceptance tests."""
    c0, c1 = _separated_pair(latent_dim)
    return CohortSpec(
        clusters=(c0, c1),
        proportions=(0.5, 0.5),
        n_series=n_series,
        timestamps=TimestampModel(count_range=(25, 45), kind="exponential", mean_days=2.3),
        seed=seed,
    )


def paper_shaped_spec(n_series: int = 200, seed: int = 0) -> CohortSpec:
    """Realism preset: 7 emotions, two clusters, weekly-ish irregular
    sampling over 84 days with a median around 34 observations."""
    c0, c1 = _separated_pair(N_EMOTIONS)
    return CohortSpec(
        clusters=(c0, c1),
        proportions=(0.68, 0.32),
        n_series=n_series,
        timestamps=TimestampModel(count_range=(22, 48), kind="exponential", mean_days=2.3),
        seed=seed,
        clip=True,
    )


PRESETS = {
    "well-separated": well_separated_spec,
    "paper-shaped": paper_shaped_spec,
}


def sample_assessments(patient_ids: list, labels: np.ndarray, seed: int = 0) -> list:
    """Plausible assessment records for a simulated cohort.

    Every patient gets the full week 0/3/6/9/12 schedule with a baseline
    severe enough to pass the default eligibility rules. Cluster 1 patients
    tend to worsen while cluster 0 patients tend to improve, so the outcome
    battery has signal to find.
    """
    from .types import AssessmentRecord

    records = []
    for i, (pid, label) in enumerate(zip(patient_ids, labels)):
        rng = np.random.default_rng([seed, 0xA55E55, i])
        # Per-week drift in the mean item response.
        drift = 0.04 if label else -0.08
        base_level = rng.uniform(1.4, 2.2)
        for week in (0, 3, 6, 9, 12):
            level = np.clip(base_level + drift * week, 0.1, 2.9)
            phq = np.clip(rng.poisson(level, size=9), 0, 3)
            gad = np.clip(rng.poisson(level, size=7), 0, 3)
            if week == 0 and phq.sum() < 10 and gad.sum() < 10:
                phq = np.minimum(phq + 1, 3)
            records.append(AssessmentRecord(
                patient_id=pid, week=week,
                phq9_items=tuple(int(v) for v in phq),
                gad7_items=tuple(int(v) for v in gad)))
    return records


def write_cohort_jsonl(series: list, path) -> None:
    """Same JSONL schema the ingest module consumes."""
    with open(path, "w") as fh:
        for s in series:
            fh.write(json.dumps({
                "patient_id": s.patient_id,
                "timestamps": s.timestamps.tolist(),
                "emotions": s.observations.tolist(),
            }))
            fh.write("\n")


def write_labels_csv(series: list, labels: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "cluster"])
        for s, l in zip(series, labels):
            w.writerow([s.patient_id, int(l)])


def read_labels_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {row["series_id"]: int(row["cluster"]) for row in csv.DictReader(fh)}
