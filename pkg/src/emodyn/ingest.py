"""Data ingestion: file parsing, cohort eligibility, talk-turn anchoring.

Input formats: emotion series JSONL (one record per patient with
"patient_id", "timestamps" in days, "emotions" as a list of 7-vectors),
assessments CSV (patient_id, week, phq1..phq9, gad1..gad7), and an optional
diagnoses CSV (patient_id, code).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .types import N_EMOTIONS, SCHEDULED_WEEKS, AssessmentRecord, TimeSeries, validate_series

logger = logging.getLogger(__name__)

DAYS_PER_WEEK = 7.0


@dataclass(frozen=True)
class CohortRules:
    min_baseline_total: int = 10
    min_talk_turns: int = 20
    gap_bounds_weeks: tuple = (2.0, 4.0)
    gap_rule_first_n: int = 5
    # When a patient has fewer than gap_rule_first_n assessments the gap rule
    # is skipped entirely; set to False to apply it to the available pairs.
    gap_rule_skip_if_fewer: bool = True
    require_transcript: bool = True
    excluded_diagnoses: frozenset = frozenset()

    def __post_init__(self):
        lo, hi = self.gap_bounds_weeks
        if not lo < hi:
            raise ValueError("gap bounds must satisfy low < high")
        if self.min_baseline_total < 0 or self.min_talk_turns < 0:
            raise ValueError("thresholds must be >= 0")
        object.__setattr__(self, "excluded_diagnoses", frozenset(self.excluded_diagnoses))


@dataclass
class ParseReport:
    n_read: int = 0
    n_kept: int = 0
    diagnostics: list = field(default_factory=list)


def parse_emotion_series(path) -> tuple:
    """Parse the emotion JSONL; invalid records are skipped with diagnostics."""
    series = []
    report = ParseReport()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            report.n_read += 1
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                report.diagnostics.append(f"line {lineno}: malformed JSON ({exc.msg})")
                continue
            try:
                s = TimeSeries(
                    patient_id=str(rec["patient_id"]),
                    timestamps=np.array(rec["timestamps"], dtype=float),
                    observations=np.array(rec["emotions"], dtype=float),
                )
            except (KeyError, ValueError, TypeError) as exc:
                report.diagnostics.append(f"line {lineno}: unreadable record ({exc})")
                continue
            if s.observations.ndim == 2 and s.observations.shape[1] != N_EMOTIONS:
                report.diagnostics.append(
                    f"line {lineno}: dimension {s.observations.shape[1]} != {N_EMOTIONS}")
                continue
            check = validate_series(s)
            if not check.ok:
                report.diagnostics.append(f"line {lineno}: {'; '.join(check.violations)}")
                continue
            series.append(s)
            report.n_kept += 1
    if report.n_read == 0:
        logger.warning("empty emotion series file: %s", path)
    return series, report


def snap_week(week: float) -> int:
    """Snap a recorded week to the nearest scheduled week; ties snap down."""
    best = min(SCHEDULED_WEEKS, key=lambda w: (abs(week - w), w))
    return int(best)


def parse_assessments(path) -> tuple:
    """Parse the assessments CSV; out-of-range items reject the row."""
    records = []
    report = ParseReport()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            report.n_read += 1
            try:
                phq = [int(row[f"phq{i}"]) for i in range(1, 10)]
                gad = [int(row[f"gad{i}"]) for i in range(1, 8)]
                week = snap_week(float(row["week"]))
            except (KeyError, ValueError) as exc:
                report.diagnostics.append(f"line {lineno}: unreadable row ({exc})")
                continue
            if any(v < 0 or v > 3 for v in phq + gad):
                report.diagnostics.append(f"line {lineno}: item outside [0,3]")
                continue
            records.append(AssessmentRecord(
                patient_id=str(row["patient_id"]), week=week,
                phq9_items=tuple(phq), gad7_items=tuple(gad)))
            report.n_kept += 1
    return records, report


def parse_diagnoses(path) -> dict:
    """Optional diagnoses CSV (patient_id, code) -> {patient_id: set of codes}."""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(str(row["patient_id"]), set()).add(str(row["code"]))
    return out


def group_assessments(records: list) -> dict:
    by_patient: dict = {}
    for rec in records:
        by_patient.setdefault(rec.patient_id, []).append(rec)
    for pid in by_patient:
        by_patient[pid].sort(key=lambda a: a.week)
    return by_patient


STAGES = ("diagnosis", "transcript", "assessment_gaps", "baseline_severity", "talk_turns")


def filter_cohort(series: list, assessments: list, rules: CohortRules,
                  diagnoses: dict | None = None) -> tuple:
    """Apply the eligibility stages in order; everything is a reported exclusion.

    Stage order: excluded diagnoses, transcript presence, assessment-gap rule
    on the first five assessments, baseline severity (PHQ-9 or GAD-7 at or
    above the threshold), talk-turn count. Returns (eligible patient ids,
    funnel) where the funnel lists {stage, excluded, remaining} and the stage
    exclusions partition the input.
    """
    series_by_patient = {s.patient_id: s for s in series}
    by_patient = group_assessments(assessments)
    patients = sorted(set(series_by_patient) | set(by_patient))
    funnel = []
    remaining = list(patients)

    def run_stage(name, keep):
        nonlocal remaining
        kept = [p for p in remaining if keep(p)]
        funnel.append({"stage": name, "excluded": len(remaining) - len(kept),
                       "remaining": len(kept)})
        remaining = kept

    run_stage("diagnosis", lambda p: not (
        diagnoses and rules.excluded_diagnoses & diagnoses.get(p, set())))
    run_stage("transcript", lambda p: (not rules.require_transcript)
              or p in series_by_patient)

    def gaps_ok(p):
        recs = by_patient.get(p, [])
        first = recs[:rules.gap_rule_first_n]
        if len(recs) < rules.gap_rule_first_n and rules.gap_rule_skip_if_fewer:
            return True
        lo, hi = rules.gap_bounds_weeks
        gaps = [b.week - a.week for a, b in zip(first, first[1:])]
        return all(lo <= g <= hi for g in gaps)

    run_stage("assessment_gaps", gaps_ok)

    def severe_enough(p):
        recs = by_patient.get(p, [])
        base = next((a for a in recs if a.week == 0), None)
        if base is None:
            return False
        return (base.phq9_total >= rules.min_baseline_total
                or base.gad7_total >= rules.min_baseline_total)

    run_stage("baseline_severity", severe_enough)
    run_stage("talk_turns", lambda p: p in series_by_patient
              and len(series_by_patient[p]) >= rules.min_talk_turns)

    return remaining, funnel


def anchor_talk_turns(series: TimeSeries, assessments: list) -> dict:
    """Assign talk turns to per-assessment windows.

    For an assessment at week w with the previous one at week w0, a turn at
    day t belongs to the window when t > 7*w0, t >= 7*(w - 3), and t <= 7*w.
    The baseline assessment anchors no window. Returns {week: index array}.
    """
    recs = sorted(assessments, key=lambda a: a.week)
    t = series.timestamps
    windows = {}
    for prev, cur in zip(recs, recs[1:]):
        low_prev = prev.week * DAYS_PER_WEEK
        low_recent = (cur.week - 3) * DAYS_PER_WEEK
        high = cur.week * DAYS_PER_WEEK
        mask = (t > low_prev) & (t >= low_recent) & (t <= high)
        windows[cur.week] = np.nonzero(mask)[0]
    return windows
