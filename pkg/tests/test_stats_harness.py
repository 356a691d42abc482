import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ctlab._rng import stream
from ctlab.stats_harness import (
    TestReport,
    chi_square_gof,
    correlation_bound,
    kolmogorov_critical,
    ks_distance,
    ks_statistic,
    mean_within_se,
    merge_cells,
    poisson_dispersion,
    proportion_within_se,
    two_sample_distance,
    two_sample_ks,
    write_jsonl,
)


def test_report_pass_iff_below_threshold():
    assert TestReport("a", 1.0, 1.0, 3).passed
    assert not TestReport("a", 1.0 + 1e-12, 1.0, 3).passed


def test_report_json_roundtrip(tmp_path):
    reps = [TestReport("x", 0.5, 1.0, 10, {"arr": np.arange(3), "v": np.float64(2.0)}),
            TestReport("y", 2.0, 1.0, 5)]
    p = tmp_path / "r.jsonl"
    write_jsonl(reps, p)
    rows = [json.loads(line) for line in p.read_text().splitlines()]
    assert [r["name"] for r in rows] == ["x", "y"]
    assert rows[0]["metadata"]["arr"] == [0, 1, 2]
    assert rows[0]["pass"] and not rows[1]["pass"]
    assert set(rows[0]) == {"name", "statistic", "threshold", "n_samples", "pass", "metadata"}


def test_ks_distance_matches_scipy(rng):
    x = rng.standard_normal(500)
    assert ks_distance(x, stats.norm.cdf) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-12)


def test_two_sample_distance_matches_scipy(rng):
    a, b = rng.random(300), rng.random(200) ** 1.2
    assert two_sample_distance(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)


def test_kolmogorov_critical_value():
    # asymptotic 1% quantile of the Kolmogorov law
    assert kolmogorov_critical(0.01) == pytest.approx(stats.kstwobign.isf(0.01))


def test_ks_rejects_nan_and_small_samples():
    with pytest.raises(ValueError):
        ks_statistic([0.1, np.nan] * 20, lambda u: u)
    with pytest.raises(ValueError):
        ks_statistic([0.1] * 5, lambda u: u)


def test_ks_unsorted_input_is_handled(rng):
    x = rng.random(100)
    assert ks_statistic(x, lambda u: u).statistic == ks_statistic(np.sort(x), lambda u: u).statistic


def test_identical_samples_two_sample_zero(rng):
    x = rng.random(100)
    assert two_sample_ks(x, x.copy()).statistic == 0.0


def test_ks_calibration():
    # data from the null reject at <= alpha + 2 sqrt(alpha / reps)
    reps, alpha = 1000, 0.01
    rej = sum(not ks_statistic(stream(5, "cal", r).random(400), lambda u: u, alpha).passed for r in range(reps))
    assert rej / reps <= alpha + 2 * math.sqrt(alpha / reps)


def test_dispersion_calibration():
    reps, alpha = 1000, 0.01
    rej = sum(not poisson_dispersion(stream(6, "cal", r).poisson(1.0, 500), alpha).passed for r in range(reps))
    assert rej / reps <= alpha + 2 * math.sqrt(alpha / reps)


def test_dispersion_detects_overdispersion(rng):
    counts = rng.negative_binomial(1, 0.5, 2000)
    assert not poisson_dispersion(counts).passed


def test_chi_square_merges_small_cells():
    counts, expected = merge_cells([1, 2, 30, 40], [1.0, 2.0, 30.0, 40.0])
    assert np.all(np.asarray(expected) >= 5.0) or len(expected) == 1
    assert sum(counts) == 73


def test_chi_square_uniform_passes(rng):
    counts = np.bincount(rng.integers(0, 15, 15_000), minlength=15)
    assert chi_square_gof(counts, np.ones(15)).passed


def test_chi_square_detects_bias(rng):
    counts = np.bincount(rng.integers(0, 15, 15_000), minlength=15)
    counts[0] += 400
    assert not chi_square_gof(counts, np.ones(15)).passed


def test_mean_and_proportion(rng):
    x = rng.exponential(2.0, 10_000)
    assert mean_within_se(x, 2.0).passed
    assert not mean_within_se(x, 2.5).passed
    assert proportion_within_se(5000, 10_000, 0.5).passed
    assert not proportion_within_se(5500, 10_000, 0.5).passed


def test_correlation_bound(rng):
    x = rng.standard_normal(1000)
    assert correlation_bound(x, rng.standard_normal(1000)).passed
    assert not correlation_bound(x, x + 0.1 * rng.standard_normal(1000)).passed


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=30, max_size=200))
def test_ks_distance_in_unit_interval(xs):
    d = ks_distance(xs, lambda u: stats.norm.cdf(u))
    assert 0.0 <= d <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.lists(st.floats(-10, 10), min_size=1, max_size=50))
def test_two_sample_distance_symmetric(a, b):
    assert two_sample_distance(a, b) == pytest.approx(two_sample_distance(b, a))
