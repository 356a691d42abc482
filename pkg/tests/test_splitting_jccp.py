import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from ctlab import levy_fluctuation as lf
from ctlab import splitting_jccp as sj
from ctlab.stats_harness import ks_statistic, mean_within_se, two_sample_ks


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3.0), st.integers(0, 2**32))
def test_tree_contour_roundtrip(chi, seed):
    tree = sj.sample_splitting_tree(chi, seed, max_individuals=2000)
    if tree.truncated:
        return
    tree.validate()
    path = sj.jccp_from_tree(tree)
    assert path.end_time == pytest.approx(tree.total_length, rel=1e-9)
    assert sj.tree_from_jccp(path).isclose(tree, 1e-7)


def test_contour_of_single_individual():
    tree = sj.ChronologicalTree({(): 0.0}, {(): 2.0})
    path = sj.jccp_from_tree(tree)
    assert path.end_time == 2.0 and path.jump_sizes.tolist() == [2.0]


def test_tree_from_jccp_rejects_bad_paths():
    bad = lf.CompoundPoissonPath(np.array([0.5]), np.array([1.0]), 0.0, 1.5, lf.STOP_EXIT, level=None, side="bottom")
    with pytest.raises(ValueError):
        sj.tree_from_jccp(bad)


def test_truncated_tree_refuses_contour(rng):
    tree = sj.sample_splitting_tree(50.0, rng, max_individuals=5)
    assert tree.truncated
    with pytest.raises(ValueError):
        sj.jccp_from_tree(tree)


def test_age_process_restriction_on_paths(rng):
    for _ in range(30):
        path = lf.simulate_levy(0.0, "horizon", rng, horizon=2000.0)
        rep = sj.check_restriction_consistency(sj.age_process_at_level(path, 0.5, 20.0),
                                               sj.age_process_at_level(path, 1.5, 20.0))
        assert rep.ok


def test_restriction_detects_a_tampered_atom(rng):
    path = lf.simulate_levy(0.0, "horizon", rng, horizon=5000.0)
    lo = sj.age_process_at_level(path, 0.5, 10.0)
    hi = sj.age_process_at_level(path, 1.0, 10.0)
    old = sj.check_restriction_consistency(lo, hi)
    assert old.checked > 0
    hi.J = hi.J + np.where(hi.ages >= 0.5, 0.37, 0.0)
    assert not sj.check_restriction_consistency(lo, hi).ok


def test_age_process_csv(tmp_path, rng):
    ap = sj.infinite_forest_age_process(0.0, 100.0, 20, rng)
    p = tmp_path / "ages.csv"
    ap.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "k,J" and len(rows) == 21
    k, J = rows[1].split(",")
    assert int(k) == 1 and float(J) == ap.J[0]


def test_renewal_undershoots_follow_ladder_law(rng):
    J = sj.first_crossing_undershoots(0.0, 20_000, rng)
    assert ks_statistic(J, lambda u: 1 - lf.ladder_height_sf(u)).passed


def test_walk_method_runs(rng):
    J = sj.first_crossing_undershoots(0.0, 3, rng, method="walk", max_jumps=10**9)
    assert J.shape == (3,) and np.all(J >= 0)
    with pytest.raises(ValueError):
        sj.first_crossing_undershoots(0.0, 3, rng, method="other")


def test_age_ppp_mean_count(rng):
    n = 500.0
    kmax = int(2 * math.sqrt(2 * n))
    c = [sj.infinite_forest_age_process(0.0, n, kmax, rng).count_in_box(1.0, 1.0) for _ in range(2000)]
    assert mean_within_se(np.array(c, float), 1.0).passed


def test_street_from_jumps_layout():
    pre = np.array([-1.0, 2.0, 4.0, 1.0, 3.5])
    post = np.array([6.0, 7.0, 9.0, 8.0, 5.0])
    s = sj.street_from_jumps(pre, post, 1.0, 5.0)  # level 5
    # crossings: jumps 0, 3, 4 (pre <= 5 < post); jump 1 and 2 too
    J = 5.0 - pre[(pre <= 5) & (post > 5)]
    assert s.R == pytest.approx(J[0] / 5.0)
    assert np.allclose(s.ages, J[1:][::-1] / 5.0)
    assert np.allclose(s.positions, np.arange(1, J.size) / math.sqrt(10.0))
    assert s.I == pytest.approx((J.size - 1) / math.sqrt(10.0))


def test_empty_street():
    s = sj.street_from_jumps(np.array([0.0]), np.array([1.0]), 1.0, 10.0)
    assert s.is_empty and s.R is None


def test_street_json_schema(rng):
    s = sj.sample_nonempty_reduced(1.0, 50.0, rng).street(1.0, 50.0)
    d = json.loads(s.to_json())
    assert set(d) == {"level", "I", "R", "atoms", "n"}
    assert d["level"] == 1.0 and d["n"] == 50.0
    assert all(len(a) == 2 for a in d["atoms"])
    assert not s.is_empty and s.n_atoms >= 1


def test_reduced_contour_records(rng):
    r = sj.reduced_jccp(3.0, 2.0, rng)
    assert r.src[0] == 0 and r.src[1] == 1
    lv = r.record_levels()
    assert np.all(np.diff(lv) > 0)
    for s, i, j in r.fragments:
        assert np.all(r.src[i:j] == s)


def test_reach_probability_vs_simulation(rng):
    b = 20.0
    est = sj.estimate_sigma_rate(1.0, b, 40_000, rng)
    p = sj.reach_probability(b)
    assert est.exact_finite_n == pytest.approx(b * p * p)
    assert abs(est.estimate - est.exact_finite_n) <= 4 * est.se


def test_pair_rate_tends_to_nine_eighths():
    assert sj.initial_jump_pair_rate(1e4) == pytest.approx(9 / 8, rel=0.02)
    assert abs(sj.initial_jump_pair_rate(1e6) - 9 / 8) < abs(sj.initial_jump_pair_rate(1e4) - 9 / 8)


def test_initial_jump_tail(rng):
    v0, v1 = sj.initial_jump_sampler(rng, 50_000)
    assert ks_statistic(v0, lambda x: 1 - lf.crossing_jump_sf(x)).passed
    assert ks_statistic(v1, lambda x: 1 - lf.crossing_jump_sf(x)).passed


@pytest.mark.parametrize("form,eps", [("nominal", 0.0), ("corrected", 1e-3)])
def test_gstar_age_sampler(rng, form, eps):
    a = 2.0
    x = sj.sample_gstar_ages(a, 20_000, rng, form, eps * a)
    mass = sj.gstar_mass(a, form, eps * a)

    def cdf(v):
        return np.array([integrate.quad(lambda s: lf.limit_rate_gstar(a, s, form), max(eps * a, 1e-300), t)[0]
                         for t in np.atleast_1d(v)]) / mass

    assert ks_statistic(x[:2000], cdf).passed


def test_street_length_means():
    assert sj.street_length_mean(2 * math.pi) == pytest.approx(1.5)
    assert sj.street_length_mean(1.0, "corrected") == pytest.approx(2 / math.pi)
    with pytest.raises(ValueError):
        sj.street_length_mean(1.0, "other")


def test_entrance_sample_structure(rng):
    for form in ("nominal", "corrected"):
        s = sj.entrance_sample(1.5, rng, form=form)
        assert np.all((s.positions >= 0) & (s.positions <= s.I))
        assert np.all((s.ages > 0) & (s.ages <= 1.5))
        assert 0 < s.R <= 1.5
        assert s.n is None


def test_entrance_length_is_exponential(rng):
    x = np.array([sj.entrance_sample(1.0, rng).I for _ in range(3000)])
    lam = sj.street_length_mean(1.0)
    assert ks_statistic(x, lambda t: 1 - np.exp(-t / lam)).passed


def test_clock_law_rescaling(rng):
    a = sj.sample_clock(2.0, 4000, rng, n=500.0)
    b = sj.sample_clock(2.0, 4000, rng, n=500.0, reference_level=1.0)
    assert two_sample_ks(a, b).passed


def test_transition_structure(rng):
    s0 = sj.entrance_sample(1.0, rng)
    s1, info = sj.transition_sample(s0, 1.5, 200.0, rng, return_info=True)
    assert s1.level == 1.5
    assert info.slots >= s0.n_atoms
    if not s1.is_empty:
        assert np.all(s1.ages > 0)


def test_atom_matching_distance_zero_on_self(rng):
    s = sj.entrance_sample(1.0, rng)
    assert sj.atom_matching_distance(s, s) == 0.0
