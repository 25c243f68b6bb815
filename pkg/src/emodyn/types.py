"""Core domain types shared by every stage of the pipeline.

All containers are immutable after construction (arrays are frozen), so
instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Canonical emotion order. This is a frozen contract: serialization and all
# matrix indexing follow this order.
EMOTIONS = ("anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise")
N_EMOTIONS = len(EMOTIONS)

SCHEDULED_WEEKS = (0, 3, 6, 9, 12)

_SYM_TOL = 1e-10
_PSD_TOL = -1e-10


def _frozen_array(x, dtype=float, ndim=None) -> np.ndarray:
    a = np.array(x, dtype=dtype)
    if ndim is not None and a.ndim != ndim:
        raise ValueError(f"expected {ndim}-dimensional array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeSeries:
    """One patient's irregularly timestamped sequence of emotion vectors.

    Timestamps are in days from treatment start; observations is a (T, 7)
    array of emotion scores in canonical order.
    """

    patient_id: str
    timestamps: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _frozen_array(self.timestamps, ndim=1))
        object.__setattr__(self, "observations", _frozen_array(self.observations, ndim=2))

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def dim(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()
    warnings: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_series(series: TimeSeries) -> ValidationReport:
    """Check a series against the type invariants.

    Violations are data, not faults: every broken invariant is reported and
    the input is never mutated. A per-vector sum far from 1 only warns,
    since upstream scorers may renormalize differently.
    """
    violations = []
    warnings = []
    t = series.timestamps
    y = series.observations
    if len(t) < 1:
        violations.append("empty series: at least 1 observation required")
    if len(t) != len(y):
        violations.append(f"timestamps length {len(t)} != observations length {len(y)}")
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        violations.append("non-increasing timestamps")
    if y.size and y.shape[1] != N_EMOTIONS:
        violations.append(f"dimension {y.shape[1]} != {N_EMOTIONS}")
    if y.size:
        if not np.all(np.isfinite(y)):
            violations.append("non-finite emotion value")
        elif np.any(y < 0.0) or np.any(y > 1.0):
            violations.append("element out of [0,1]")
        else:
            sums = y.sum(axis=1)
            bad = np.abs(sums - 1.0) > 0.01
            if np.any(bad):
                warnings.append(f"{int(bad.sum())} vectors with sum deviating from 1 by >0.01")
    return ValidationReport(tuple(violations), tuple(warnings))


@dataclass(frozen=True)
class ClusterParameters:
    """Parameters of one cluster's state-space model.

    mu/P: initial latent mean and covariance; A: latent generator (the step
    transition is Id + delta*A); C: observation matrix; Gamma/Sigma: process
    and observation noise bases, scaled per step by delta and 1/delta.
    """

    mu: np.ndarray
    A: np.ndarray
    C: np.ndarray
    P: np.ndarray
    Sigma: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen_array(self.mu, ndim=1))
        for name in ("A", "C", "P", "Sigma", "Gamma"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), ndim=2))

    @property
    def latent_dim(self) -> int:
        return self.A.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.C.shape[0]

    def validate(self) -> list:
        """Return invariant violations (symmetry / PSD of P, Sigma, Gamma)."""
        problems = []
        d_x, d_y = self.latent_dim, self.obs_dim
        if self.mu.shape != (d_x,):
            problems.append(f"mu shape {self.mu.shape} != ({d_x},)")
        if self.A.shape != (d_x, d_x):
            problems.append(f"A shape {self.A.shape} not square of latent dim")
        if self.C.shape != (d_y, d_x):
            problems.append(f"C shape {self.C.shape} != ({d_y}, {d_x})")
        for name, want in (("P", d_x), ("Gamma", d_x), ("Sigma", d_y)):
            m = getattr(self, name)
            if m.shape != (want, want):
                problems.append(f"{name} shape {m.shape} != ({want}, {want})")
                continue
            if np.max(np.abs(m - m.T)) > _SYM_TOL:
                problems.append(f"{name} not symmetric within {_SYM_TOL}")
            elif np.min(np.linalg.eigvalsh(0.5 * (m + m.T))) < _PSD_TOL:
                problems.append(f"{name} not positive semidefinite")
        return problems


@dataclass(frozen=True)
class FittedMixture:
    """Result of a mixture fit: per-cluster parameters plus assignments."""

    clusters: tuple  # of ClusterParameters
    weights: np.ndarray  # (M,)
    responsibilities: np.ndarray  # (N, M)
    labels: np.ndarray  # (N,) argmax cluster index
    loglik_trace: np.ndarray  # per-iteration total log-likelihood
    converged: bool = True
    n_iters: int = 0
    frozen_clusters: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "weights", _frozen_array(self.weights, ndim=1))
        object.__setattr__(self, "responsibilities", _frozen_array(self.responsibilities, ndim=2))
        object.__setattr__(self, "labels", _frozen_array(self.labels, dtype=int, ndim=1))
        object.__setattr__(self, "loglik_trace", _frozen_array(self.loglik_trace, ndim=1))

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class AssessmentRecord:
    """PHQ-9 and GAD-7 item responses at one scheduled week."""

    patient_id: str
    week: int
    phq9_items: tuple
    gad7_items: tuple

    def __post_init__(self):
        object.__setattr__(self, "phq9_items", tuple(int(v) for v in self.phq9_items))
        object.__setattr__(self, "gad7_items", tuple(int(v) for v in self.gad7_items))

    @property
    def phq9_total(self) -> int:
        return sum(self.phq9_items)

    @property
    def gad7_total(self) -> int:
        return sum(self.gad7_items)

    def validate(self) -> list:
        problems = []
        if self.week not in SCHEDULED_WEEKS:
            problems.append(f"week {self.week} not in {SCHEDULED_WEEKS}")
        if len(self.phq9_items) != 9:
            problems.append(f"{len(self.phq9_items)} PHQ-9 items != 9")
        if len(self.gad7_items) != 7:
            problems.append(f"{len(self.gad7_items)} GAD-7 items != 7")
        if any(v < 0 or v > 3 for v in self.phq9_items + self.gad7_items):
            problems.append("item outside [0,3]")
        return problems
