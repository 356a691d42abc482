import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ctlab import besq_timechange as bt
from ctlab.stats_harness import ks_statistic


@pytest.mark.parametrize("theta", [1.0, 0.5, 2.0])
def test_hitting_sampler_matches_cdf(rng, theta):
    x = 0.7
    s = bt.hitting_time_sampler(x, theta, rng, 20_000)
    d = stats.kstest(s, lambda t: bt.hitting_time_cdf(t, x, theta)).statistic
    assert d < 1.63 / math.sqrt(s.size)


def test_hitting_cdf_is_inverse_gamma():
    # x/(2G) with G ~ Gamma(3/2) is inverse gamma with scale x/2
    t = np.linspace(0.05, 5, 30)
    ref = stats.invgamma.cdf(t, 1.5, scale=0.5)
    assert np.allclose(bt.hitting_time_cdf(t, 1.0, 1.0), ref, atol=1e-12)
    assert bt.hitting_time_cdf(0.0, 1.0, 1.0) == 0.0


def test_hitting_mean(rng):
    assert bt.hitting_time_mean(2.0, 1.0) == 2.0
    assert bt.hitting_time_mean(2.0, 0.0) == math.inf
    s = bt.hitting_time_sampler(1.0, 2.0, rng, 200_000)
    assert s.mean() == pytest.approx(0.5, rel=0.02)


def test_sampler_rejects_bad_arguments():
    with pytest.raises(ValueError):
        bt.hitting_time_sampler(1.0, 3.0)
    with pytest.raises(ValueError):
        bt.hitting_time_sampler(-1.0, 1.0)


def test_absorbed_mean_oracle():
    # E[Z_t] = x - E[t ^ T0]; check by direct integration of the inverse gamma tail
    x, t = 0.8, 1.3
    tail = lambda s: stats.invgamma.sf(s, 1.5, scale=x / 2)
    from scipy.integrate import quad
    assert bt.absorbed_mean(t, x) == pytest.approx(x - quad(tail, 0, t)[0], abs=1e-9)
    # decreases to 0 with a t^{-1/2} tail since E[T0] = x
    m = [bt.absorbed_mean(s, x) for s in (5.0, 20.0, 80.0)]
    assert m[0] > m[1] > m[2] > 0
    assert m[1] / m[2] == pytest.approx(2.0, rel=0.1)


def test_sde_absorption_law(rng):
    b = bt.simulate_besq_batch(-1.0, 1.0, 2e-4, 30.0, 4000, rng)
    T = b.absorption[0]
    T = np.minimum(T, 30.0)
    r = ks_statistic(T, lambda t: bt.hitting_time_cdf(t, 1.0, 1.0), threshold=0.035)
    assert r.passed, r


def test_single_path_and_csv(tmp_path, rng):
    p = bt.simulate_besq(-1.0, 0.5, 1e-3, 5.0, rng)
    assert p.times[0] == 0 and p.values[0] == 0.5
    assert np.all(p.values >= 0)
    if p.absorbed_at is not None:
        assert np.all(p.values[p.times >= p.absorbed_at] == 0)
    f = tmp_path / "z.csv"
    p.to_csv(f)
    rows = f.read_text().splitlines()
    assert rows[0] == "t,value" and len(rows) == p.times.size + 1
    t, v = map(float, rows[1].split(","))
    assert (t, v) == (0.0, 0.5)
    with pytest.raises(ValueError):
        bt.simulate_besq(-1.0, 0.0, 1e-3, 1.0)


def test_positive_drift_is_reflected(rng):
    p = bt.simulate_besq(1.0, 0.1, 1e-2, 10.0, rng)
    assert p.absorbed_at is None and np.all(p.values >= 0)


def test_batch_coarse_levels_share_noise(rng):
    b = bt.simulate_besq_batch(-1.0, 1.0, 1e-3, 2.0, 200, rng, obs_times=[1.0], refine=2)
    assert b.dt.tolist() == [1e-3, 2e-3, 4e-3]
    # coupled schemes give strongly correlated endpoints
    assert np.corrcoef(b.observed[0, :, 0], b.observed[2, :, 0])[0, 1] > 0.9
    with pytest.raises(ValueError):
        bt.simulate_besq_batch(-1.0, 1.0, 1e-3, 1.0, 5, rng, obs_times=[2.0])


def test_gap_trend_is_first_order(rng):
    g = bt.discretisation_gap_trend(1.0, 0.01, 3, 3000, rng)
    assert np.all(g.gap > 0)
    assert np.all(np.abs(g.ratios - 2.0) < 0.6)


def test_duality(rng):
    r = bt.duality_check(1.0, 0.5, 4000, rng, dt=5e-4)
    assert r.passed, r


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.05, 3.0), min_size=3, max_size=3), st.integers(0, 2**32))
def test_nwf_stays_on_simplex(x0, seed):
    rng = np.random.default_rng(seed)
    paths = [bt.simulate_besq(-1.0, x, 1e-3, 2.0, rng) for x in x0]
    w = bt.nwf_time_change(*paths)
    assert np.allclose(w.mu.sum(0), 1.0, atol=1e-12)
    assert np.all(w.mu >= 0)
    assert np.all(np.diff(w.time) >= 0)
    assert w.mu.shape[1] == w.time.size


def test_nwf_rejects_mismatched_grids(rng):
    a = bt.simulate_besq(-1.0, 1.0, 1e-3, 1.0, rng)
    b = bt.simulate_besq(-1.0, 1.0, 2e-3, 1.0, rng)
    with pytest.raises(ValueError):
        bt.nwf_time_change(a, a, b)


def test_nwf_clock_on_constant_mass():
    # total mass 3 held fixed gives C_t = t / 3
    t = np.linspace(0, 1, 11)
    ps = [bt.DiffusionPath(t, np.full(11, v)) for v in (0.5, 1.0, 1.5)]
    w = bt.nwf_time_change(*ps)
    assert np.allclose(w.clock, t / 3)
    assert np.allclose(w.mu[:, 0], [1 / 6, 1 / 3, 1 / 2])
    assert w.tau == math.inf


def test_gw_converges_to_besq(rng):
    r = bt.gw_besq_convergence_check(200, 1.0, [0.2, 0.5], 3000, rng, dt=1e-3)
    assert r.passed, r.reports
    assert np.allclose(r.gw_mean, r.exact_mean, atol=4 * r.gw_se.max())
