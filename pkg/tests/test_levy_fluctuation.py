import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from ctlab import levy_fluctuation as lf
from ctlab.stats_harness import ks_statistic, proportion_within_se, two_sample_ks


@pytest.fixture(scope="module")
def W():
    return lf.scale_function(200.0)


def test_jump_law_is_consistent(rng):
    assert lf.jump_sf(0.0) == 1.0
    m, _ = integrate.quad(lf.jump_density, 0, np.inf)
    assert m == pytest.approx(1.0)
    # unit mean jump: the process is driftless in mean
    mean, _ = integrate.quad(lf.jump_sf, 0, np.inf)
    assert mean == pytest.approx(1.0)
    x = lf.sample_jumps(20_000, rng)
    assert ks_statistic(x, lambda u: 1 - lf.jump_sf(u)).passed


def test_quantiles_invert_sfs():
    p = np.linspace(0.01, 0.99, 50)
    assert np.allclose(1 - lf.jump_sf(lf.jump_quantile(p)), p)
    assert np.allclose(1 - lf.ladder_height_sf(lf.ladder_height_quantile(p)), p)
    assert np.allclose(1 - lf.crossing_jump_sf(lf.crossing_jump_quantile(p)), p)


def test_laplace_exponent_matches_definition():
    # phi(theta) = theta - int (1 - e^{-theta u}) jump density
    for th in (0.3, 1.0, 4.0):
        q, _ = integrate.quad(lambda u: (1 - math.exp(-th * u)) * lf.jump_density(u), 0, np.inf, limit=200)
        assert lf.laplace_exponent(th) == pytest.approx(th - q, rel=1e-7)


def test_scale_function_basics(W):
    assert W(0.0) == 1.0
    assert W(-1.0) == 0.0
    assert np.all(np.diff(W.values) >= 0)
    with pytest.raises(ValueError):
        lf.scale_function(10.0, step=0.02)
    with pytest.raises(ValueError):
        W(1e6)


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_scale_function_laplace(theta):
    W = lf.scale_function(2000.0)
    num, exact = lf.scale_laplace_check(W, theta)
    assert num == pytest.approx(exact, rel=0.01)
    assert exact == pytest.approx(1.0 / lf.laplace_exponent(theta))


def test_scale_function_large_x_constant():
    W = lf.scale_function(10_000.0)
    # W(x)/sqrt(x) approaches 2 sqrt 2/pi from above at rate x^{-1/2}
    r = [W(x) / math.sqrt(x) for x in (2500.0, 10_000.0)]
    assert r[1] < r[0]
    assert abs(r[1] - lf.W_ASYMPTOTE) < 0.02


def test_scale_function_refines_with_step():
    a = lf.scale_function(5.0, 0.01)
    b = lf.scale_function(5.0, 0.0025)
    assert abs(a(5.0) - b(5.0)) < 1e-3


def test_scale_table_csv(tmp_path, W):
    p = tmp_path / "w.csv"
    W.to_csv(p, every=100)
    lines = p.read_text().splitlines()
    assert lines[0] == "x,W"
    x, w = map(float, lines[1].split(","))
    assert (x, w) == (0.0, 1.0)


def test_exit_frequency(rng, W):
    n = 20_000
    p = lf.exit_frequency(1.0, 1.0, n, rng)
    assert proportion_within_se(int(round(p * n)), n, lf.exit_probability(1.0, 1.0, W)).passed


def test_ladder_laws(rng):
    _, und, ove, st_ = lf.first_passage_batch(3000, 0.0, 0.0, rng)
    ok = st_ == 1
    cdf = lambda u: 1 - lf.ladder_height_sf(u)  # noqa: E731
    assert ks_statistic(und[ok], cdf).passed
    assert ks_statistic(ove[ok], cdf).passed


def test_first_passage_requires_start_below_level():
    with pytest.raises(ValueError):
        lf.first_passage_batch(1, 2.0, 1.0)


def test_conditional_undershoot_density_normalised():
    W = lf.scale_function(4.0, step=5e-4)
    m, _ = integrate.quad(lambda v: lf.conditional_undershoot_density_r(1.0, v, W), 0, 1, limit=400,
                          points=list(np.linspace(0.01, 0.99, 99)))
    assert m == pytest.approx(1.0, abs=1e-6)


def test_conditional_undershoot_simulation(rng):
    W = lf.scale_function(4.0)
    _, und, _, st_ = lf.first_passage_batch(20_000, 1.0, 1.0, rng, floor=0.0)
    v, cdf = lf.conditional_undershoot_cdf(1.0, W)
    assert ks_statistic(und[st_ == 1], lambda x: np.interp(x, v, cdf)).passed
    # crossing probability 1 - 1/W(a)
    assert proportion_within_se(int(np.sum(st_ == 1)), st_.size, lf.crossing_probability_q(1.0, W)).passed


def test_joint_density_marginal_is_undershoot_density(W):
    a, v = 1.0, 0.4
    m, _ = integrate.quad(lambda u: lf.joint_density_IJ(a, u, v, W), 0, np.inf)
    assert m == pytest.approx(lf.undershoot_density_j(a, v, W), rel=1e-6)


def test_spot_values():
    assert lf.limit_rate_gstar(1.0, 1.0) == 1.0
    assert lf.limit_density_h(1.0, 1.0) == pytest.approx(3 / (4 * math.pi))


def test_corrected_limits_match_finite_n():
    n = 4000.0
    W = lf.scale_function(2 * n + 16)
    v = np.linspace(0.1, 0.9, 9)
    fin = lf.scaled_rate_g(1.0, v, n, W)
    assert np.max(np.abs(fin / lf.limit_rate_gstar(1.0, v, "corrected") - 1)) < 0.06
    vh = np.linspace(0.1, 1.9, 10)
    fin = lf.scaled_density_h(1.0, vh, n, W)
    assert np.max(np.abs(fin / lf.limit_density_h(1.0, vh, "corrected") - 1)) < 0.03


def test_ladder_walk_overshoot_stable_limit(rng):
    x = lf.ladder_walk_overshoot(400.0, 4000, rng)
    assert ks_statistic(x, lambda u: lf.stable_overshoot_cdf(400.0, u), threshold=0.05).passed


def test_excursion_undershoot_law_vs_mc(rng):
    W = lf.scale_function(8.0)
    for start in ("crossing", "jump"):
        a = lf.sample_excursion_undershoot(2.0, 4000, W, rng, start)
        b, _ = lf.excursion_undershoot_mc(2.0, 4000, rng, start)
        assert two_sample_ks(a, b).passed


def test_simulated_path_jccp_shape(rng):
    p = lf.simulate_levy(0.0, "horizon", rng, horizon=50.0)
    pre = p.pre_jump_values()
    assert np.all(p.jump_sizes > 0)
    assert pre.size == p.jump_sizes.size


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_exit_probability_in_unit_interval(x, y):
    W = lf.scale_function(11.0)
    p = lf.exit_probability(x, y, W)
    assert 0.0 < p < 1.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1e4))
def test_ladder_sf_dominates_jump_sf(u):
    assert lf.ladder_height_sf(u) >= lf.jump_sf(u)
