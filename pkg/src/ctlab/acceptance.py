"""Deterministic acceptance suite.

Each numbered criterion runs a set of checks on its own random streams
``stream(seed, "criterion", i, ...)`` and is summarised by one
:class:`~ctlab.stats_harness.TestReport` whose statistic is the worst
``statistic / threshold`` ratio among its checks (pass iff ``<= 1``). The
individual checks are kept in the metadata.

``quick=True`` shrinks sample sizes for smoke runs; thresholds are the
same, so a quick run is a weaker but still honest check.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

from . import besq_timechange as bq
from . import cladogram_chain as cc
from . import gw_emigration as gw
from . import levy_fluctuation as lf
from . import mailman as mm
from . import splitting_jccp as sj
from ._rng import stream
from .stats_harness import (
    DEFAULT_ALPHA,
    TestReport,
    absolute_error,
    chi_square_gof,
    correlation_bound,
    ks_statistic,
    mean_within_se,
    poisson_dispersion,
    proportion_within_se,
    relative_error,
    two_sample_ks,
)


class Budget:
    """Sample sizes: full or scaled down for quick runs."""

    def __init__(self, quick: bool):
        self.quick = quick

    def __call__(self, full: int, quick: int) -> int:
        return quick if self.quick else full


def _rng(seed: int, i: int, *keys):
    return stream(seed, "criterion", i, *keys)


def _fixed(name: str, statistic: float, threshold: float, n: int = 1, **meta) -> TestReport:
    return TestReport(name, statistic, threshold, n, meta)


# ------------------------------------------------------------------ 1-5: branching process


def c01_extinction_law(seed: int, b: Budget) -> list[TestReport]:
    n = b(100_000, 5_000)
    sigma, _ = gw.sample_gw(n, _rng(seed, 1))
    return [
        ks_statistic(sigma, gw.extinction_cdf, name="ks sigma0 vs L", threshold=0.006 if not b.quick else None),
        mean_within_se(sigma, 1.0, name="mean sigma0"),
    ]


def c02_laplace(seed: int, b: Budget) -> list[TestReport]:
    out = []
    for th in (0.5, 1.0, 2.0, 5.0, 10.0):
        out.append(absolute_error(gw.laplace_psi_continued_fraction(th, 200), gw.laplace_psi(th), 1e-8,
                                  name=f"psi({th:g}) closed vs continued fraction"))
    sigma, _ = gw.sample_gw(b(100_000, 5_000), _rng(seed, 2))
    out.append(mean_within_se(np.exp(-2.0 * sigma), gw.laplace_psi(2.0), name="psi(2) vs Monte Carlo"))
    return out


def c03_conditional_growth(seed: int, b: Budget) -> list[TestReport]:
    times = (0.5, 1.0, 2.0)
    _, z = gw.sample_gw(b(100_000, 5_000), _rng(seed, 3), obs_times=times)
    out = []
    for j, t in enumerate(times):
        alive = z[:, j][z[:, j] > 0]
        out.append(mean_within_se(alive, gw.conditional_mean(t), name=f"E[Z_t | alive] t={t:g}"))
    return out


def c04_martingales(seed: int, b: Budget) -> list[TestReport]:
    _, z = gw.sample_gw(b(100_000, 5_000), _rng(seed, 4), obs_times=(1.0,))
    zt = z[:, 0]
    return [
        mean_within_se(gw.scale_martingale_value(zt), 1.0, name="scale martingale t=1"),
        mean_within_se(gw.laguerre_martingale_value(0.1, zt, 1.0), 1.0, name="Laguerre martingale x=0.1 t=1"),
    ]


def c05_yaglom(seed: int, b: Budget) -> list[TestReport]:
    y = gw.yaglom_sample(200, 1.0, b(10_000, 1_000), _rng(seed, 5))
    return [ks_statistic(y, lambda x: 1.0 - np.exp(-x), name="Yaglom n=200 t=1 vs Exp(1)", threshold=0.05)]


# ------------------------------------------------------------------ 6-9: fluctuation theory


def c06_scale_function(seed: int, b: Budget) -> list[TestReport]:
    W = lf.scale_function(10_000.0)
    ratio = float(W(10_000.0) / 100.0)
    out = [
        absolute_error(float(W(0.0)), 1.0, 0.0, name="W(0) = 1"),
        TestReport("W(1e4)/sqrt(1e4) in [1.17, 1.22]", max(1.17 - ratio, ratio - 1.22, 0.0), 0.0, 1,
                   {"ratio": ratio, "large_x_constant": lf.W_ASYMPTOTE}),
    ]
    for th in (0.5, 1.0, 2.0):
        num, exact = lf.scale_laplace_check(W, th)
        out.append(relative_error(num, exact, 0.01, name=f"Laplace transform of W at {th:g}"))
    n = b(100_000, 10_000)
    p_hat = lf.exit_frequency(1.0, 1.0, n, _rng(seed, 6))
    out.append(proportion_within_se(int(round(p_hat * n)), n, lf.exit_probability(1.0, 1.0, W),
                                    name="exit below vs W(1)/W(2)"))
    return out


def c07_ladder(seed: int, b: Budget) -> list[TestReport]:
    n = b(100_000, 5_000)
    _, und, ove, st = lf.first_passage_batch(n, 0.0, 0.0, _rng(seed, 7))
    ok = st == 1
    und, ove = und[ok], ove[ok]

    def cdf(u):
        return 1.0 - lf.ladder_height_sf(u)

    thr = 0.006 if not b.quick else None
    # paths still below the level after the jump budget are censored; the
    # return time has tail ~ m^(-1/3) in the number of jumps m
    censored = float(np.mean(st == 3))
    ku = ks_statistic(und, cdf, name="undershoot vs Gbar", threshold=thr)
    ko = ks_statistic(ove, cdf, name="overshoot vs Gbar", threshold=thr)
    ku.metadata["censored_fraction"] = ko.metadata["censored_fraction"] = censored
    return [
        ku,
        ko,
        proportion_within_se(int(np.sum(und + ove > 4.0)), und.size, 4.0 / 27.0 + 1.0 / 3.0,
                             name="P(I0 + J0 > 4)"),
    ]


def c08_conditional_undershoot(seed: int, b: Budget) -> list[TestReport]:
    from scipy.integrate import IntegrationWarning, quad

    a = 1.0
    # the trapezoid/linear-interpolation error in the integral is O(step^2)
    W = lf.scale_function(4.0, step=5e-4)
    n = b(100_000, 5_000)
    _, und, _, st = lf.first_passage_batch(n, a, a, _rng(seed, 8), floor=0.0)
    und = und[st == 1]
    v, cdf = lf.conditional_undershoot_cdf(a, W)
    with warnings.catch_warnings():
        # the tight tolerance exhausts subdivisions well below the 1e-6 target
        warnings.simplefilter("ignore", IntegrationWarning)
        mass = quad(lambda x: lf.conditional_undershoot_density_r(a, x, W), 0.0, a, limit=400,
                    points=list(np.linspace(0.01, 0.99, 99)), epsabs=1e-12, epsrel=1e-12)[0]
    return [
        ks_statistic(und, lambda x: np.interp(x, v, cdf), name="conditioned undershoot a=1 vs r_a",
                     threshold=0.02),
        absolute_error(mass, 1.0, 1e-6, name="integral of r_a"),
    ]


def c09_scaled_limits(seed: int, b: Budget) -> list[TestReport]:
    n = 10_000.0
    W = lf.scale_function(2.0 * n + 16.0)
    a, a0, a1 = 1.0, 1.0, 2.0
    vg = np.linspace(0.05, 0.95, 19) * a
    vh = np.linspace(0.05, 2.0, 40)
    vs = np.linspace(0.05, 1.95, 39)
    out = []
    for label, fin, lim in (
        ("g*", lambda: lf.scaled_rate_g(a, vg, n, W), lambda f: lf.limit_rate_gstar(a, vg, f)),
        ("h_a", lambda: lf.scaled_density_h(a, vh, n, W), lambda f: lf.limit_density_h(a, vh, f)),
        ("h*", lambda: lf.scaled_density_hstar(a0, a1, vs, n, W), lambda f: lf.limit_density_hstar(a0, a1, vs, f)),
    ):
        x = np.asarray(fin())
        err = float(np.max(np.abs(x / lim("nominal") - 1.0)))
        err_c = float(np.max(np.abs(x / lim("corrected") - 1.0)))
        out.append(TestReport(f"finite-n {label} within 2% (n=1e4)", err, 0.02, x.size,
                              {"corrected_form_error": err_c}))
    out.append(absolute_error(lf.limit_rate_gstar(1.0, 1.0), 1.0, 1e-12, name="g*_1(1) = 1"))
    out.append(absolute_error(lf.limit_density_h(1.0, 1.0), 3.0 / (4.0 * math.pi), 1e-12, name="h_1(1) = 3/(4 pi)"))
    return out


# ------------------------------------------------------------------ 10-13: ages and streets


def c10_age_ppp(seed: int, b: Budget) -> list[TestReport]:
    n = 1000.0
    s = math.sqrt(2.0 * n)
    reps = b(1000, 200)
    c1 = np.empty(reps)
    c2 = np.empty(reps)
    kmax = int(math.floor(2.0 * s))
    for r in range(reps):
        ap = sj.infinite_forest_age_process(0.0, n, kmax, _rng(seed, 10, r))
        c1[r] = ap.count_in_box(1.0, 1.0)
        c2[r] = ap.count_in_box(2.0, 1.0) - c1[r]
    return [
        mean_within_se(c1, 1.0, name="mean count in [0,1]x[1,inf)"),
        poisson_dispersion(c1, DEFAULT_ALPHA, name="Poisson dispersion"),
        correlation_bound(c1, c2, name="disjoint boxes uncorrelated"),
    ]


def c11_restriction(seed: int, b: Budget) -> list[TestReport]:
    n = 100.0
    reps = b(1000, 100)
    bad = checked = 0
    for r in range(reps):
        path = lf.simulate_levy(0.0, "horizon", _rng(seed, 11, r), horizon=1e4)
        rep = sj.check_restriction_consistency(sj.age_process_at_level(path, 1.0, n),
                                               sj.age_process_at_level(path, 2.0, n))
        bad += len(rep.violations)
        checked += rep.checked
    return [TestReport("restriction violations over paths", bad, 0, reps, {"atoms_checked": checked})]


def c12_streets(seed: int, b: Budget) -> list[TestReport]:
    out = []
    n = 1000.0
    for a, size in ((1.0, b(4000, 300)), (2.0 * math.pi, b(2000, 150))):
        rng = _rng(seed, 12, "street", int(1000 * a))
        lengths = np.array([sj.sample_nonempty_reduced(a, n, rng).street(a, n).I for _ in range(size)])
        rep = mean_within_se(lengths, sj.street_length_mean(a, "nominal"),
                             name=f"non-empty street length mean a={a:.4g} (n=1e3) vs 3 sqrt(a)/(2 sqrt(2 pi))")
        rep.metadata["corrected_mean"] = sj.street_length_mean(a, "corrected")
        out.append(rep)
    m = b(200_000, 20_000)
    v0, _ = sj.initial_jump_sampler(_rng(seed, 12, "tail"), size=m)
    out.append(proportion_within_se(int(np.sum(v0 > 4.0)), m, 4.0 / 27.0 + 1.0 / 3.0, name="P(V > 4)"))
    out.append(relative_error(sj.initial_jump_pair_rate(1e4), 9.0 / 8.0, 0.02, name="n P(V0>n, V1>n) at n=1e4 vs 9/8"))
    return out


def c13_kernel_coherence(seed: int, b: Budget) -> list[TestReport]:
    reps = b(10_000, 400)
    n = 1000.0
    rng = _rng(seed, 13, "push")
    pushed = []
    for _ in range(reps):
        st = sj.transition_sample(sj.entrance_sample(1.0, rng), 2.0, n, rng)
        if not st.is_empty:
            pushed.append(st.I)
    target = sj.entrance_lengths(2.0, reps, _rng(seed, 13, "target"))
    rep = two_sample_ks(pushed, target, name="entrance(1) pushed to 2 vs entrance(2): length",
                        threshold=0.05)
    rep.metadata["non_empty_fraction"] = len(pushed) / reps
    rep.metadata["pushed_mean"] = float(np.mean(pushed)) if pushed else math.nan
    rep.metadata["target_mean"] = sj.street_length_mean(2.0)
    rep.metadata["corrected_mean"] = sj.street_length_mean(2.0, "corrected")
    return [rep]


# ------------------------------------------------------------------ 14-16


def c14_cladogram(seed: int, b: Budget) -> list[TestReport]:
    out = []
    P, codes = cc.exact_transition_matrix(4)
    steps = b(400_000, 40_000)
    run = cc.discrete_run(cc.RootedBinaryTree.caterpillar(4), steps, _rng(seed, 14, "P"))
    z = cc.transition_z_scores(cc.transition_counts(run, codes), P)
    out.append(TestReport("transition frequencies within 4 SE (n=4)", float(np.max(z)), 4.0, steps))
    thin = cc.spectral_thinning(P)
    run = cc.discrete_run(cc.RootedBinaryTree.caterpillar(4), b(30_000, 3_000) * thin, _rng(seed, 14, "pi"), thin)
    counts = cc.shape_census(run[1:], codes)
    out.append(chi_square_gof(counts, np.ones(len(codes)), 0.001, name="stationary chi-square over 15 shapes"))
    tree = cc.RootedBinaryTree.caterpillar(4)
    v = min((u for u in range(2 * tree.n_leaves) if tree.is_internal(u)), key=lambda u: len(tree.leaves_below(u)))
    k = len(tree.leaves_below(v))
    m = b(20_000, 2_000)
    horizon = 1e4
    ext = cc.clade_extinction_times(tree, v, m, horizon, _rng(seed, 14, "clade"))
    sigma, _ = gw.sample_gw(m, _rng(seed, 14, "gw"), start=k, horizon=horizon)
    rep = two_sample_ks(ext, sigma, DEFAULT_ALPHA, name=f"clade of {k} leaves extinction vs GW(-1) from {k}")
    out.append(rep)
    return out


def c15_mailman(seed: int, b: Budget) -> list[TestReport]:
    reps = b(200, 30)
    ks = (8, 16, 32, 64)
    stats_ = {k: [] for k in ks}
    worst4 = 0.0
    nested = 0
    recipe = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for r in range(reps):
            fam = mm.sample_family(1.0, 64, mm.DEFAULT_DEPTH, _rng(seed, 15, r))
            for k in ks:
                stats_[k].append(mm.leaf_tightness_stat(mm.ktree_from_mailmen(fam.members[:k])))
            if r < b(20, 5):
                sub = fam.members[:12]
                tree = mm.ktree_from_mailmen(sub)
                D = tree.distance_matrix()
                worst4 = max(worst4, mm.four_point_violation(D))
                nested += mm.nested_consistency_violation(sub)
                R = np.array([[mm.recipe_distance(x, y) if x is not y else 0.0 for y in sub] for x in sub])
                recipe = max(recipe, float(np.max(np.abs(R - D))))
    med = [float(np.median(stats_[k])) for k in ks]
    steps = np.diff(med)
    return [
        TestReport("four-point condition", worst4, 1e-9, reps),
        TestReport("nested consistency violations", nested, 0, reps),
        TestReport("tree distance vs recipe distance", recipe, 1e-9, reps),
        TestReport("leaf-tightness median strictly decreasing k=8..64", float(np.max(steps)) if steps.size else 0.0,
                   -1e-15, reps, {"medians": dict(zip(ks, med))}),
    ]


def c16_besq(seed: int, b: Budget) -> list[TestReport]:
    out = []
    m = b(5_000, 500)
    batch = bq.simulate_besq_batch(-1.0, 1.0, 1e-4, 20.0, m, _rng(seed, 16, "sde"))
    out.append(ks_statistic(batch.absorption[0], lambda t: bq.hitting_time_cdf(t, 1.0, 1.0),
                            name="SDE absorption (dt=1e-4) vs x/(2G)", threshold=0.03))
    trend = bq.discretisation_gap_trend(1.0, 0.005, 3, b(100_000, 20_000), _rng(seed, 16, "gap"))
    dev = float(np.max(np.abs(trend.ratios - 2.0)))
    out.append(TestReport("absorption bias halves with dt (coupled, dt=0.04..0.01)", dev, 0.5, 0,
                          {"dt": trend.dt, "gap": trend.gap, "se": trend.se, "ratios": trend.ratios}))
    rng = _rng(seed, 16, "nwf")
    paths = [bq.simulate_besq(-1.0, 1.0, 1e-4, 2.0, rng) for _ in range(3)]
    nwf = bq.nwf_time_change(*paths)
    out.append(TestReport("NWF simplex identity", float(np.max(np.abs(nwf.mu.sum(0) - 1.0))), 1e-12,
                          nwf.mu.shape[1]))
    conv = bq.gw_besq_convergence_check(500, 1.0, [0.2], b(2000, 300), _rng(seed, 16, "gw"))
    out.extend(conv.reports)
    return out


CRITERIA: list[tuple[int, str, Callable]] = [
    (1, "GW(-1) extinction law", c01_extinction_law),
    (2, "Laplace transform consistency", c02_laplace),
    (3, "conditional growth", c03_conditional_growth),
    (4, "martingales", c04_martingales),
    (5, "Yaglom limit", c05_yaglom),
    (6, "scale function", c06_scale_function),
    (7, "ladder laws", c07_ladder),
    (8, "conditional undershoot", c08_conditional_undershoot),
    (9, "scaled limits", c09_scaled_limits),
    (10, "age-process Poisson limit", c10_age_ppp),
    (11, "restriction consistency", c11_restriction),
    (12, "streets and entrance law", c12_streets),
    (13, "kernel coherence", c13_kernel_coherence),
    (14, "cladogram chain", c14_cladogram),
    (15, "mailman k-trees", c15_mailman),
    (16, "BESQ", c16_besq),
]


def summarize(i: int, title: str, checks: list[TestReport]) -> TestReport:
    """One report per criterion: statistic = worst normalised check (pass iff <= 1)."""

    def ratio(r: TestReport) -> float:
        if r.threshold <= 0:
            # zero-tolerance checks: 0 when met, 1 + excess otherwise
            return 0.0 if r.passed else 1.0 + (r.statistic - r.threshold)
        if r.passed:
            return max(r.statistic, 0.0) / r.threshold
        return max(r.statistic / r.threshold, 1.0 + 1e-12) if math.isfinite(r.statistic) else 1e300

    worst = max(ratio(r) for r in checks)
    rep = TestReport(f"criterion {i:02d} {title}", worst, 1.0, sum(r.n_samples for r in checks),
                     {"checks": [r.to_dict() for r in checks]})
    return rep


def run_criterion(i: int, seed: int, quick: bool = False) -> TestReport:
    _, title, fn = CRITERIA[i - 1]
    return summarize(i, title, fn(seed, Budget(quick)))


def _serialize(reports: list[TestReport]) -> str:
    return "".join(r.to_json() + "\n" for r in reports)


def determinism_check(seed: int) -> TestReport:
    """Criterion 17: two quick runs of criteria 1-16 serialise to identical bytes."""
    a = _serialize([run_criterion(i, seed, True) for i in range(1, 17)])
    b = _serialize([run_criterion(i, seed, True) for i in range(1, 17)])
    diff = sum(1 for x, y in zip(a.splitlines(), b.splitlines()) if x != y) + abs(len(a.splitlines()) - len(b.splitlines()))
    return TestReport("criterion 17 determinism", diff, 0, 2, {"bytes": len(a)})


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CTL_THREADS", "1")))
    except ValueError:
        return 1


def run_all(seed: int, quick: bool = False, criteria=None, threads: int | None = None,
            include_determinism: bool = True) -> list[TestReport]:
    """Run the selected criteria (default all) and return one report each, in order."""
    ids = list(criteria) if criteria is not None else [c[0] for c in CRITERIA]
    threads = _threads() if threads is None else threads
    if threads > 1 and len(ids) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            reports = list(ex.map(run_criterion, ids, [seed] * len(ids), [quick] * len(ids)))
    else:
        reports = [run_criterion(i, seed, quick) for i in ids]
    if include_determinism and criteria is None:
        reports.append(determinism_check(seed))
    return reports


def reports_to_jsonl(reports: list[TestReport]) -> str:
    return _serialize(reports)


def reports_to_csv(reports: list[TestReport]) -> str:
    lines = ["name,statistic,threshold,n_samples,pass"]
    for r in reports:
        lines.append(f"{json.dumps(r.name)},{r.statistic!r},{r.threshold!r},{r.n_samples},{int(r.passed)}")
    return "\n".join(lines) + "\n"
