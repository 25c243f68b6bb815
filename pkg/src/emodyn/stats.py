"""Outcome labeling and the statistical battery.

Mann-Whitney U (normal approximation with tie correction, plus an exact
enumeration oracle for small samples), Bonferroni adjustment, IRLS logistic
regression with Wald intervals, and the per-item baseline comparison table.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

logger = logging.getLogger(__name__)

CLINICAL_THRESHOLD = 10
CHANGE_POINTS = 5
REMISSION_THRESHOLD = 5
ITEM_THRESHOLD = 2
FINAL_WEEKS = (3, 12)  # inclusive window for the "final" assessment


@dataclass(frozen=True)
class OutcomeLabels:
    """Outcome flags for one patient on one instrument."""

    patient_id: str
    instrument: str  # "phq9" | "gad7"
    baseline_total: int
    final_total: int
    significant_change: bool
    response: bool
    remission: bool
    deterioration: bool


def label_outcomes(assessments: list) -> list:
    """Apply the outcome definitions to one patient's assessments.

    Baseline is the week-0 record; final is the last assessment in weeks
    3-12. Significant change: final below the clinical threshold with an
    improvement of at least 5 points. Deterioration: worsening by 5 or more.
    Response: improvement of at least half the baseline. Remission: final
    below 5. Returns one OutcomeLabels per instrument.

    Raises ValueError when the baseline or any follow-up is missing.
    """
    records = sorted(assessments, key=lambda a: a.week)
    if not records:
        raise ValueError("no assessments")
    pid = records[0].patient_id
    baseline = next((a for a in records if a.week == 0), None)
    if baseline is None:
        raise ValueError("missing baseline assessment")
    followups = [a for a in records if FINAL_WEEKS[0] <= a.week <= FINAL_WEEKS[1]]
    if not followups:
        raise ValueError("no follow-up assessment in weeks 3-12")
    final = followups[-1]

    out = []
    for instrument in ("phq9", "gad7"):
        b = getattr(baseline, f"{instrument}_total")
        f = getattr(final, f"{instrument}_total")
        drop = b - f
        out.append(OutcomeLabels(
            patient_id=pid,
            instrument=instrument,
            baseline_total=b,
            final_total=f,
            significant_change=(f < CLINICAL_THRESHOLD and drop >= CHANGE_POINTS),
            response=(b > 0 and drop >= 0.5 * b),
            remission=(f < REMISSION_THRESHOLD),
            deterioration=(-drop >= CHANGE_POINTS),
        ))
    return out


def label_cohort_outcomes(assessments_by_patient: dict):
    """Label every patient; patients without a usable baseline/final are
    excluded with a per-reason count."""
    labels = []
    exclusions = {}
    for pid in sorted(assessments_by_patient):
        try:
            labels.extend(label_outcomes(assessments_by_patient[pid]))
        except ValueError as exc:
            reason = str(exc)
            exclusions[reason] = exclusions.get(reason, 0) + 1
            logger.info("patient %s excluded from outcomes: %s", pid, reason)
    return labels, exclusions


@dataclass(frozen=True)
class MannWhitneyResult:
    U: float  # U statistic of the first sample
    z: float
    p_two_sided: float


def mann_whitney_u(x, y) -> MannWhitneyResult:
    """Rank-sum U with midrank ties; tie-corrected normal approximation with
    a 0.5 continuity correction; two-sided p."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    combined = np.concatenate([x, y])
    ranks = rankdata(combined)
    # U counts pairs where x exceeds y (midrank share for ties).
    U = float(np.sum(ranks[:n1])) - n1 * (n1 + 1) / 2.0
    n = n1 + n2
    _, counts = np.unique(combined, return_counts=True)
    tie_term = float(np.sum(counts**3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0.0:
        return MannWhitneyResult(U=U, z=0.0, p_two_sided=1.0)
    dev = U - n1 * n2 / 2.0
    z = (dev - 0.5 * np.sign(dev)) / np.sqrt(var) if dev != 0 else 0.0
    p = min(1.0, 2.0 * norm.sf(abs(z)))
    return MannWhitneyResult(U=U, z=float(z), p_two_sided=float(p))


def mann_whitney_exact(x, y) -> float:
    """Exact two-sided p by full enumeration of group assignments.

    Uses the same midranks as the approximate path. Capped at 16 total
    observations.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    if n1 + n2 > 16:
        raise ValueError("exact enumeration capped at 16 total observations")
    ranks = rankdata(np.concatenate([x, y]))
    offset = n1 * (n1 + 1) / 2.0
    center = n1 * n2 / 2.0
    observed = abs((float(np.sum(ranks[:n1])) - offset) - center)
    rank_list = ranks.tolist()
    hits = 0
    total = 0
    for comb in itertools.combinations(rank_list, n1):
        u = sum(comb) - offset
        total += 1
        if abs(u - center) >= observed - 1e-12:
            hits += 1
    return hits / total


def bonferroni(p_values) -> list:
    """p_adj = min(1, m * p) with m the number of tests."""
    ps = [float(p) for p in p_values]
    if any(p < 0.0 or p > 1.0 for p in ps):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(ps)
    return [min(1.0, m * p) for p in ps]


@dataclass(frozen=True)
class RegressionResult:
    names: tuple
    estimates: np.ndarray
    std_errors: np.ndarray
    odds_ratios: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    p_values: np.ndarray
    n_used: int
    converged: bool
    separation_flag: bool
    deviance: float
    reference_levels: tuple = ()


class RankDeficientDesign(ValueError):
    pass


def logistic_fit(X: np.ndarray, y: np.ndarray, names=None, max_iter: int = 100) -> RegressionResult:
    """Maximum-likelihood logistic regression via IRLS with Wald intervals.

    Convergence when the max absolute score drops below 1e-8 or the relative
    deviance change falls below 1e-10. Step-halving keeps the deviance
    non-increasing. Perfect separation (a diverging coefficient with a
    non-vanishing score) is flagged and its intervals suppressed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if names is None:
        names = tuple(f"x{j}" for j in range(p))
    if len(np.unique(y)) < 2:
        raise ValueError("outcome must contain both classes")
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        # Name columns that are linear combinations of the preceding ones.
        aliased = []
        for j in range(1, p + 1):
            if np.linalg.matrix_rank(X[:, :j]) < j:
                aliased.append(names[j - 1])
        raise RankDeficientDesign(f"design rank {rank} < {p}; aliased columns: {aliased}")

    beta = np.zeros(p)
    dev = _deviance(X, y, beta)
    converged = False
    for _ in range(max_iter):
        eta = X @ beta
        mu = _expit(eta)
        score = X.T @ (y - mu)
        if np.max(np.abs(score)) < 1e-8:
            converged = True
            break
        w = np.clip(mu * (1.0 - mu), 1e-12, None)
        H = (X.T * w) @ X
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(H + 1e-10 * np.trace(H) / p * np.eye(p), score)
        # Step-halving: never accept a deviance increase.
        lam = 1.0
        for _ in range(30):
            cand = beta + lam * step
            cand_dev = _deviance(X, y, cand)
            if cand_dev <= dev + 1e-12:
                break
            lam *= 0.5
        rel_change = abs(dev - cand_dev) / (abs(dev) + 1e-300)
        beta, dev = cand, cand_dev
        if rel_change < 1e-10:
            converged = True
            break

    mu = _expit(X @ beta)
    score = X.T @ (y - mu)
    # Under perfect separation the score never reaches zero at any finite
    # coefficient vector; numerically it underflows once the fitted
    # probabilities saturate, so a vanishing deviance is treated the same way.
    diverged = np.max(np.abs(score)) > 1e-8 or dev < 1e-6
    separation = bool(np.max(np.abs(beta)) > 15.0 and diverged)
    w = np.clip(mu * (1.0 - mu), 1e-12, None)
    info = (X.T * w) @ X
    cov = np.linalg.inv(info)
    se = np.sqrt(np.diag(cov))
    z = beta / se
    p_vals = 2.0 * norm.sf(np.abs(z))
    if separation:
        ci_low = np.full(p, np.nan)
        ci_high = np.full(p, np.nan)
    else:
        with np.errstate(over="ignore"):
            ci_low = np.exp(beta - 1.96 * se)
            ci_high = np.exp(beta + 1.96 * se)
    return RegressionResult(
        names=tuple(names),
        estimates=beta,
        std_errors=se,
        odds_ratios=np.exp(beta),
        ci_low=ci_low,
        ci_high=ci_high,
        p_values=p_vals,
        n_used=n,
        converged=converged,
        separation_flag=separation,
        deviance=float(dev),
    )


def _expit(eta):
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))


def _deviance(X, y, beta):
    eta = X @ beta
    # -2 loglik, computed stably via log1p(exp(.))
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - y * eta))


# Reference levels for the one-hot covariate encoding.
GENDER_REFERENCE = "Female"
AGE_REFERENCE = "26-35"
EDUCATION_REFERENCE = "Bachelor-or-higher"


def encode_covariates(rows: list, fields: dict) -> tuple:
    """One-hot encode categorical covariates with fixed reference levels.

    rows: list of dicts; fields: {column: reference_level}. Rows with a
    missing value in any requested field are dropped (listwise deletion).
    Returns (matrix, names, kept_row_indices).
    """
    kept = [i for i, r in enumerate(rows)
            if all(r.get(f) not in (None, "") for f in fields)]
    cols, names = [], []
    for f, ref in fields.items():
        levels = sorted({rows[i][f] for i in kept} - {ref})
        for lv in levels:
            names.append(f"{f}[{lv}]")
            cols.append([1.0 if rows[i][f] == lv else 0.0 for i in kept])
    mat = np.array(cols).T if cols else np.empty((len(kept), 0))
    return mat, tuple(names), kept


PHQ9_ITEM_NAMES = tuple(f"phq{i}" for i in range(1, 10))
GAD7_ITEM_NAMES = tuple(f"gad{i}" for i in range(1, 8))


def baseline_item_comparison(assessments_by_patient: dict, cluster_labels: dict) -> list:
    """Per-item cluster comparison at baseline.

    For each of the 16 items (9 PHQ-9 + 7 GAD-7), runs a Mann-Whitney U test
    between the two clusters' baseline responses, Bonferroni-adjusts with
    m = 16, and reports per-cluster means and the proportion at or above the
    clinical item threshold of 2.
    """
    groups = {0: [], 1: []}
    for pid, recs in assessments_by_patient.items():
        if pid not in cluster_labels:
            continue
        base = next((a for a in sorted(recs, key=lambda a: a.week) if a.week == 0), None)
        if base is None:
            continue
        groups[int(cluster_labels[pid])].append(base)
    if not groups[0] or not groups[1]:
        raise ValueError("both clusters must have baseline assessments")

    rows = []
    for instrument, item_names in (("phq9", PHQ9_ITEM_NAMES), ("gad7", GAD7_ITEM_NAMES)):
        for j, item in enumerate(item_names):
            vals = {
                l: np.array([getattr(a, f"{instrument}_items")[j] for a in groups[l]], dtype=float)
                for l in (0, 1)
            }
            mw = mann_whitney_u(vals[0], vals[1])
            rows.append({
                "item": item,
                "instrument": instrument,
                "U": mw.U,
                "p_raw": mw.p_two_sided,
                "mean_cluster0": float(vals[0].mean()),
                "mean_cluster1": float(vals[1].mean()),
                "pct_threshold_cluster0": float(np.mean(vals[0] >= ITEM_THRESHOLD)),
                "pct_threshold_cluster1": float(np.mean(vals[1] >= ITEM_THRESHOLD)),
            })
    adjusted = bonferroni([r["p_raw"] for r in rows])
    for r, p_adj in zip(rows, adjusted):
        r["p_bonferroni"] = p_adj
    return rows
