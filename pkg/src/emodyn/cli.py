"""Command-line orchestration of the full pipeline.

Subcommands: simulate | ingest | fit | assign | network | outcomes |
pipeline. Options can come from a JSON config file plus flag overrides;
flags win. Exit codes: 0 success, 1 data/model error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, ingest, mixture, network, stats, synthetic
from .types import EMOTIONS

logger = logging.getLogger(__name__)


class DataError(RuntimeError):
    """Invalid data or model content (exit code 1)."""


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _require(cond, message):
    if not cond:
        raise DataError(message)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec_fn = synthetic.PRESETS[args.preset]
    spec = spec_fn(n_series=args.n, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series, labels = synthetic.sample_cohort(spec)
    synthetic.write_cohort_jsonl(series, out / "cohort.jsonl")
    synthetic.write_labels_csv(series, labels, out / "labels_true.csv")
    assessments = synthetic.sample_assessments(
        [s.patient_id for s in series], labels, seed=spec.seed)
    _write_csv(out / "assessments.csv",
               ["patient_id", "week"] + [f"phq{i}" for i in range(1, 10)]
               + [f"gad{i}" for i in range(1, 8)],
               [[a.patient_id, a.week, *a.phq9_items, *a.gad7_items] for a in assessments])
    counts = [len(s) for s in series]
    print(f"simulated {len(series)} series, dim {series[0].dim}, "
          f"median turns {int(np.median(counts))}, seed {spec.seed}")
    return 0


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series, series_report = ingest.parse_emotion_series(args.series)
    assessments, assess_report = ingest.parse_assessments(args.assessments)
    diagnoses = ingest.parse_diagnoses(args.diagnoses) if args.diagnoses else None
    rules = ingest.CohortRules(
        min_baseline_total=args.min_baseline,
        min_talk_turns=args.min_turns,
        excluded_diagnoses=frozenset(args.exclude_diagnosis or ()),
    )
    eligible, funnel = ingest.filter_cohort(series, assessments, rules, diagnoses)
    keep = set(eligible)
    kept_series = [s for s in series if s.patient_id in keep]
    synthetic.write_cohort_jsonl(kept_series, out / "eligible.jsonl")
    with open(out / "funnel.json", "w") as fh:
        json.dump({
            "input_patients": funnel[0]["excluded"] + funnel[0]["remaining"],
            "stages": funnel,
            "series_parse": {"read": series_report.n_read, "kept": series_report.n_kept,
                             "diagnostics": series_report.diagnostics},
            "assessment_parse": {"read": assess_report.n_read, "kept": assess_report.n_kept,
                                 "diagnostics": assess_report.diagnostics},
        }, fh, indent=2)
        fh.write("\n")
    print(f"eligible patients: {len(eligible)}")
    return 0


# ---------------------------------------------------------------------------
# fit / assign
# ---------------------------------------------------------------------------

def _load_series(path):
    series, report = ingest.parse_emotion_series(path)
    for d in report.diagnostics:
        logger.warning("%s", d)
    return series


def cmd_fit(args) -> int:
    series = _load_series(args.series)
    _require(series, "empty cohort: no valid series to fit")
    config = mixture.FitConfig(
        n_clusters=args.clusters, latent_dim=args.latent_dim,
        max_iters=args.max_iters, tol=args.tol, seed=args.seed,
        threads=args.threads,
    )
    model = mixture.fit(series, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mixture.save_model(model, out / "model.json")
    _write_csv(out / "labels.csv", ["series_id", "cluster"],
               [(s.patient_id, int(l)) for s, l in zip(series, model.labels)])
    _write_csv(out / "loglik_trace.csv", ["iteration", "log_likelihood"],
               [(i + 1, ll) for i, ll in enumerate(model.loglik_trace)])
    msg = "converged" if model.converged else "max iterations reached"
    print(f"fit {model.n_clusters} clusters on {len(series)} series "
          f"in {model.n_iters} iterations ({msg})")
    if args.score:
        from sklearn.metrics import adjusted_rand_score
        truth = synthetic.read_labels_csv(args.score)
        pairs = [(truth[s.patient_id], int(l))
                 for s, l in zip(series, model.labels) if s.patient_id in truth]
        ari = adjusted_rand_score([a for a, _ in pairs], [b for _, b in pairs])
        print(f"adjusted rand index vs {args.score}: {ari:.4f}")
    return 0


def cmd_assign(args) -> int:
    series = _load_series(args.series)
    _require(series, "no valid series to assign")
    model = mixture.load_model(args.model)
    labels, resp = mixture.assign(series, model, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "labels.csv", ["series_id", "cluster"],
               [(s.patient_id, int(l)) for s, l in zip(series, labels)])
    print(f"assigned {len(series)} series")
    return 0


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

def cmd_network(args) -> int:
    model = mixture.load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    edge_rows, cent_rows = [], []
    for l, params in enumerate(model.clusters):
        T = network.transition_matrix(params, args.delta)
        net = network.build_network(T, args.delta)
        edge_rows.extend(network.edge_rows(l, net, threshold=args.threshold))
        cent_rows.extend(network.centrality_rows(l, net))
    _write_csv(out / "edges.csv", ["cluster", "from_emotion", "to_emotion", "weight"], edge_rows)
    _write_csv(out / "centrality.csv",
               ["cluster", "emotion", "out_expected_influence", "rank"], cent_rows)
    print(f"networks for {model.n_clusters} clusters at delta={args.delta} weeks")
    return 0


# ---------------------------------------------------------------------------
# outcomes
# ---------------------------------------------------------------------------

OUTCOME_NAMES = ("significant_change", "response", "remission", "deterioration")


def cmd_outcomes(args) -> int:
    records, report = ingest.parse_assessments(args.assessments)
    for d in report.diagnostics:
        logger.warning("%s", d)
    by_patient = ingest.group_assessments(records)
    cluster_labels = synthetic.read_labels_csv(args.labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    labels, exclusions = stats.label_cohort_outcomes(by_patient)
    _write_csv(out / "outcomes.csv",
               ["patient_id", "instrument", "baseline", "final", "significant_change",
                "response", "remission", "deterioration"],
               [(o.patient_id, o.instrument, o.baseline_total, o.final_total,
                 int(o.significant_change), int(o.response), int(o.remission),
                 int(o.deterioration)) for o in labels])
    for reason, count in exclusions.items():
        print(f"excluded {count} patients: {reason}")

    demo_rows = None
    if args.demographics:
        with open(args.demographics, newline="") as fh:
            demo_rows = {row["patient_id"]: row for row in csv.DictReader(fh)}

    reg_rows = []
    for instrument in ("phq9", "gad7"):
        inst_labels = [o for o in labels if o.instrument == instrument
                       and o.patient_id in cluster_labels]
        for outcome in OUTCOME_NAMES:
            y = np.array([getattr(o, outcome) for o in inst_labels], dtype=float)
            cluster = np.array([cluster_labels[o.patient_id] for o in inst_labels], dtype=float)
            names = ["intercept", "cluster"]
            X = np.column_stack([np.ones(len(y)), cluster])
            if demo_rows is not None:
                rows = [demo_rows.get(o.patient_id, {}) for o in inst_labels]
                extra, extra_names, kept = stats.encode_covariates(rows, {
                    "gender": stats.GENDER_REFERENCE,
                    "age": stats.AGE_REFERENCE,
                    "education": stats.EDUCATION_REFERENCE,
                })
                X = np.column_stack([X[kept], extra])
                y = y[kept]
                names += list(extra_names)
            if len(np.unique(y)) < 2:
                logger.warning("skipping %s/%s: outcome has a single class", outcome, instrument)
                continue
            res = stats.logistic_fit(X, y, names=names)
            i = res.names.index("cluster")
            reg_rows.append((outcome, instrument, res.odds_ratios[i], res.ci_low[i],
                             res.ci_high[i], res.p_values[i], res.n_used))
    _write_csv(out / "regression.csv",
               ["outcome", "measure", "odds_ratio", "ci_low", "ci_high", "p", "n"], reg_rows)

    item_rows = stats.baseline_item_comparison(by_patient, cluster_labels)
    _write_csv(out / "item_comparison.csv",
               ["item", "instrument", "U", "p_raw", "p_bonferroni", "mean_cluster0",
                "mean_cluster1", "pct_threshold_cluster0", "pct_threshold_cluster1"],
               [(r["item"], r["instrument"], r["U"], r["p_raw"], r["p_bonferroni"],
                 r["mean_cluster0"], r["mean_cluster1"], r["pct_threshold_cluster0"],
                 r["pct_threshold_cluster1"]) for r in item_rows])
    print(f"outcome tables for {len(labels)} instrument-patient rows")
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def cmd_pipeline(args) -> int:
    with open(args.config) as fh:
        config = json.load(fh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = _config_hash(config)
    manifest_path = out / "manifest.json"
    previous = None
    if args.resume and manifest_path.exists():
        with open(manifest_path) as fh:
            previous = json.load(fh)
        if previous.get("config_hash") != chash:
            logger.warning("config changed; resume disabled")
            previous = None

    timings = {}
    ns = argparse.Namespace

    def stage(name, fn, arguments, product):
        if previous and (out / product).exists() and name in previous.get("stages", []):
            timings[name] = previous["timings"].get(name)
            logger.info("resume: skipping stage %s", name)
            return
        start = time.monotonic()
        fn(arguments)
        timings[name] = round(time.monotonic() - start, 3)

    stage("ingest", cmd_ingest, ns(
        series=config["series"], assessments=config["assessments"],
        diagnoses=config.get("diagnoses"), out=str(out),
        min_baseline=config.get("min_baseline", 10),
        min_turns=config.get("min_turns", 20),
        exclude_diagnosis=config.get("exclude_diagnosis"),
    ), "eligible.jsonl")
    stage("fit", cmd_fit, ns(
        series=str(out / "eligible.jsonl"), clusters=config.get("clusters", 2),
        latent_dim=config.get("latent_dim", 7), max_iters=config.get("max_iters", 200),
        tol=config.get("tol", 1e-6), seed=config["seed"],
        threads=config.get("threads", 1), out=str(out), score=None,
    ), "model.json")
    stage("assign", cmd_assign, ns(
        series=str(out / "eligible.jsonl"), model=str(out / "model.json"),
        threads=config.get("threads", 1), out=str(out),
    ), "labels.csv")
    stage("network", cmd_network, ns(
        model=str(out / "model.json"), delta=config.get("delta", 1.0),
        threshold=config.get("edge_threshold", 0.0), out=str(out),
    ), "centrality.csv")
    stage("outcomes", cmd_outcomes, ns(
        assessments=config["assessments"], labels=str(out / "labels.csv"),
        demographics=config.get("demographics"), out=str(out),
    ), "regression.csv")

    with open(manifest_path, "w") as fh:
        json.dump({
            "emodyn_version": __version__,
            "model_schema_version": mixture.MODEL_SCHEMA_VERSION,
            "config_hash": chash,
            "seed": config["seed"],
            "stages": list(timings),
            "timings": timings,
        }, fh, indent=2)
        fh.write("\n")
    print(f"pipeline complete: {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _positive_int(value):
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emodyn", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort with ground truth")
    p.add_argument("--preset", choices=sorted(synthetic.PRESETS), default="well-separated")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="parse inputs and apply cohort eligibility rules")
    p.add_argument("--series", required=True)
    p.add_argument("--assessments", required=True)
    p.add_argument("--diagnoses")
    p.add_argument("--min-baseline", type=int, default=10, dest="min_baseline")
    p.add_argument("--min-turns", type=int, default=20, dest="min_turns")
    p.add_argument("--exclude-diagnosis", action="append", dest="exclude_diagnosis")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit the mixture model")
    p.add_argument("--series", required=True)
    p.add_argument("--clusters", type=_positive_int, default=2)
    p.add_argument("--latent-dim", type=_positive_int, default=7, dest="latent_dim")
    p.add_argument("--max-iters", type=_positive_int, default=200, dest="max_iters")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--score", help="ground-truth labels CSV to score against")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("assign", help="assign series to clusters of a fitted model")
    p.add_argument("--series", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("network", help="temporal networks and centralities from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.0,
                   help="absolute edge threshold for the display export only")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_network)

    p = sub.add_parser("outcomes", help="outcome labels and the statistics battery")
    p.add_argument("--assessments", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--demographics")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_outcomes)

    p = sub.add_parser("pipeline", help="run every stage from one config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
