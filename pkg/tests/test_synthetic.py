import numpy as np
import pytest

from emodyn import lgssm, synthetic
from emodyn.types import validate_series


class TestSampleTimestamps:
    def test_fixed_weekly_grid(self):
        model = synthetic.TimestampModel(count_range=(12, 12), kind="fixed", mean_days=7.0)
        t = synthetic.sample_timestamps(model, 84.0, np.random.default_rng(0))
        np.testing.assert_allclose(t, np.arange(0.0, 84.0, 7.0))

    def test_same_seed_identical(self):
        model = synthetic.TimestampModel()
        a = synthetic.sample_timestamps(model, 84.0, np.random.default_rng(7))
        b = synthetic.sample_timestamps(model, 84.0, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_exponential_mean(self):
        model = synthetic.TimestampModel(count_range=(2, 2), kind="exponential", mean_days=3.0)
        rng = np.random.default_rng(1)
        gaps = [np.diff(synthetic.sample_timestamps(model, 1e9, rng))[0] for _ in range(10_000)]
        assert np.mean(gaps) == pytest.approx(3.0, rel=0.05)

    def test_truncated_at_horizon(self):
        model = synthetic.TimestampModel(count_range=(40, 40), kind="fixed", mean_days=7.0)
        t = synthetic.sample_timestamps(model, 84.0, np.random.default_rng(0))
        assert t[-1] <= 84.0


class TestSampleSeries:
    def test_zero_noise_equals_noiseless_trajectory(self):
        spec = synthetic.well_separated_spec(seed=0)
        gen = spec.clusters[0]
        from emodyn.types import ClusterParameters
        quiet = ClusterParameters(mu=gen.mu, A=gen.A, C=gen.C,
                                  P=np.zeros_like(gen.P), Sigma=np.zeros_like(gen.Sigma),
                                  Gamma=np.zeros_like(gen.Gamma))
        grid = np.arange(0.0, 30.0, 3.0)
        s = synthetic.sample_series(quiet, grid, np.random.default_rng(0))
        np.testing.assert_allclose(s.observations, lgssm.noiseless_trajectory(quiet, grid), atol=1e-12)

    def test_monte_carlo_mean_matches_analytic(self):
        spec = synthetic.well_separated_spec(seed=0)
        gen = spec.clusters[0]
        grid = np.arange(0.0, 28.0, 7.0)
        n = 10_000
        rng = np.random.default_rng(42)
        acc = np.zeros((len(grid), 7))
        for _ in range(n):
            acc += synthetic.sample_series(gen, grid, rng).observations
        mean = acc / n
        truth = lgssm.noiseless_trajectory(gen, grid)
        # per-step per-dim standard error bound (conservative)
        deltas = lgssm.step_deltas(grid)
        for k in range(len(grid)):
            var_obs = (np.trace(gen.P) + np.trace(gen.Gamma) * grid[k]
                       + np.trace(gen.Sigma) / deltas[k])
            se = np.sqrt(var_obs / n)
            assert np.max(np.abs(mean[k] - truth[k])) < 3 * np.sqrt(var_obs) / np.sqrt(n) + 3 * se

    def test_same_seed_bit_identical(self):
        spec = synthetic.well_separated_spec(seed=0)
        grid = np.arange(0.0, 30.0, 2.0)
        a = synthetic.sample_series(spec.clusters[0], grid, np.random.default_rng(9))
        b = synthetic.sample_series(spec.clusters[0], grid, np.random.default_rng(9))
        np.testing.assert_array_equal(a.observations, b.observations)

    def test_clipping(self):
        spec = synthetic.well_separated_spec(seed=0)
        grid = np.array([0.0, 0.01])  # tiny gap: large observation noise
        s = synthetic.sample_series(spec.clusters[0], grid, np.random.default_rng(3), clip=True)
        assert np.all(s.observations >= 0.0) and np.all(s.observations <= 1.0)


class TestSampleCohort:
    def test_degenerate_proportions(self):
        spec = synthetic.CohortSpec(
            clusters=synthetic.well_separated_spec().clusters,
            proportions=(1.0, 0.0), n_series=30, seed=1)
        _, labels = synthetic.sample_cohort(spec)
        assert set(labels) == {0}

    def test_label_counts_within_binomial_bounds(self):
        from scipy.stats import binom
        spec = synthetic.CohortSpec(
            clusters=synthetic.well_separated_spec().clusters,
            proportions=(0.68, 0.32), n_series=200, seed=5)
        _, labels = synthetic.sample_cohort(spec)
        n1 = int(np.sum(labels == 1))
        lo, hi = binom.ppf([0.005, 0.995], 200, 0.32)
        assert lo <= n1 <= hi

    def test_paper_shaped_validates(self):
        spec = synthetic.paper_shaped_spec(n_series=50, seed=2)
        series, _ = synthetic.sample_cohort(spec)
        for s in series:
            assert validate_series(s).ok
        counts = [len(s) for s in series]
        assert 28 <= np.median(counts) <= 40

    def test_determinism(self):
        spec = synthetic.paper_shaped_spec(n_series=10, seed=3)
        a, la = synthetic.sample_cohort(spec)
        b, lb = synthetic.sample_cohort(spec)
        np.testing.assert_array_equal(la, lb)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.observations, sb.observations)
            np.testing.assert_array_equal(sa.timestamps, sb.timestamps)


class TestRoundTrip:
    def test_jsonl_round_trip_bit_equal(self, tmp_path):
        from emodyn import ingest
        spec = synthetic.well_separated_spec(n_series=5, seed=4)
        series, labels = synthetic.sample_cohort(spec)
        # clip into [0,1] so validation passes on re-parse
        spec_clipped = synthetic.CohortSpec(
            clusters=spec.clusters, proportions=spec.proportions,
            n_series=5, timestamps=spec.timestamps, seed=4, clip=True)
        series, labels = synthetic.sample_cohort(spec_clipped)
        path = tmp_path / "cohort.jsonl"
        synthetic.write_cohort_jsonl(series, path)
        parsed, report = ingest.parse_emotion_series(path)
        assert report.n_kept == 5
        for orig, back in zip(series, parsed):
            assert orig.patient_id == back.patient_id
            np.testing.assert_array_equal(orig.timestamps, back.timestamps)
            np.testing.assert_array_equal(orig.observations, back.observations)

    def test_labels_round_trip(self, tmp_path):
        spec = synthetic.well_separated_spec(n_series=5, seed=4)
        series, labels = synthetic.sample_cohort(spec)
        path = tmp_path / "labels.csv"
        synthetic.write_labels_csv(series, labels, path)
        back = synthetic.read_labels_csv(path)
        assert back == {s.patient_id: int(l) for s, l in zip(series, labels)}


def test_sample_assessments_pass_eligibility():
    recs = synthetic.sample_assessments(["a", "b"], np.array([0, 1]), seed=0)
    assert len(recs) == 10
    for r in recs:
        assert r.validate() == []
    baselines = [r for r in recs if r.week == 0]
    for b in baselines:
        assert b.phq9_total >= 10 or b.gad7_total >= 10
