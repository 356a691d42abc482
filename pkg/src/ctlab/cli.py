"""Command-line front end.

Every subcommand runs a set of checks, writes the reports as JSON lines or
CSV (``--out``, default stdout) and exits with status 1 if any check fails.
Some subcommands also write data artifacts (tables, streets, trees).

Options can come from a flat ``key=value`` file given by ``--config``;
flags on the command line override it.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import warnings
from typing import Callable, Optional, Sequence

import numpy as np

from . import acceptance as acc
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

SUBCOMMANDS: dict[str, tuple[str, Callable]] = {}


def subcommand(name: str, help_: str):
    def deco(fn):
        SUBCOMMANDS[name] = (help_, fn)
        return fn
    return deco


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key=value`` file. ``#`` starts a comment; blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            if not k:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[k.replace("-", "_")] = v
    return out


def _rng(args, *keys):
    return stream(args.seed, args.command, *keys)


# ------------------------------------------------------------------ subcommands


@subcommand("gw-verify", "GW(-1) extinction time: KS vs L and mean one")
def cmd_gw_verify(args) -> list[TestReport]:
    n = args.replicas or 100_000
    sigma, _ = gw.sample_gw(n, _rng(args))
    return [
        ks_statistic(sigma, gw.extinction_cdf, args.alpha, name="ks sigma0 vs L"),
        mean_within_se(sigma, 1.0, name="mean sigma0"),
        absolute_error(gw.laplace_psi_continued_fraction(2.0, 200), gw.laplace_psi(2.0), 1e-8,
                       name="psi(2) closed vs continued fraction"),
    ]


@subcommand("levy-scale", "scale function table, its large-x constant and Laplace checks")
def cmd_levy_scale(args) -> list[TestReport]:
    W = lf.scale_function(args.xmax, args.step)
    if args.table:
        W.to_csv(args.table)
    x = args.xmax
    ratio = float(W(x) / math.sqrt(x))
    out = [
        absolute_error(float(W(0.0)), 1.0, 0.0, name="W(0) = 1"),
        TestReport(f"W({x:g})/sqrt({x:g}) in [1.17, 1.22]", max(1.17 - ratio, ratio - 1.22, 0.0), 0.0, 1,
                   {"ratio": ratio, "large_x_constant": lf.W_ASYMPTOTE}),
        relative_error(ratio, lf.W_ASYMPTOTE, 0.05, name=f"W({x:g})/sqrt({x:g}) vs 2 sqrt(2)/pi"),
    ]
    for th in (0.5, 1.0, 2.0):
        num, exact = lf.scale_laplace_check(W, th)
        out.append(relative_error(num, exact, 0.01, name=f"Laplace transform of W at {th:g}"))
    return out


@subcommand("levy-ladder", "first-crossing undershoot and overshoot laws")
def cmd_levy_ladder(args) -> list[TestReport]:
    n = args.replicas or 100_000
    _, und, ove, st = lf.first_passage_batch(n, 0.0, 0.0, _rng(args))
    ok = st == 1
    und, ove = und[ok], ove[ok]

    def cdf(u):
        return 1.0 - lf.ladder_height_sf(u)

    return [
        ks_statistic(und, cdf, args.alpha, name="undershoot vs Gbar"),
        ks_statistic(ove, cdf, args.alpha, name="overshoot vs Gbar"),
        proportion_within_se(int(np.sum(und + ove > 4.0)), und.size, 4.0 / 27.0 + 1.0 / 3.0,
                             name="P(I0 + J0 > 4)"),
    ]


@subcommand("age-ppp", "age process at level 0: Poisson counts in boxes")
def cmd_age_ppp(args) -> list[TestReport]:
    n = float(args.scale_n or 1000)
    reps = args.replicas or 1000
    s = math.sqrt(2.0 * n)
    kmax = int(math.floor(2.0 * s))
    c1 = np.empty(reps)
    c2 = np.empty(reps)
    for r in range(reps):
        ap = sj.infinite_forest_age_process(0.0, n, kmax, _rng(args, r))
        if args.ages and r == 0:
            ap.to_csv(args.ages)
        c1[r] = ap.count_in_box(1.0, 1.0)
        c2[r] = ap.count_in_box(2.0, 1.0) - c1[r]
    return [
        mean_within_se(c1, 1.0, name="mean count in [0,1]x[1,inf)"),
        poisson_dispersion(c1, args.alpha, name="Poisson dispersion"),
        correlation_bound(c1, c2, name="disjoint boxes uncorrelated"),
    ]


@subcommand("chain-stationarity", "discrete tree chain: exact transitions and uniform stationary law")
def cmd_chain_stationarity(args) -> list[TestReport]:
    n = int(args.scale_n or 4)
    P, codes = cc.exact_transition_matrix(n)
    start = cc.RootedBinaryTree.caterpillar(n)
    steps = args.replicas or 400_000
    run = cc.discrete_run(start, steps, _rng(args, "P"))
    z = cc.transition_z_scores(cc.transition_counts(run, codes), P)
    thin = cc.spectral_thinning(P)
    samples = max(steps // 10, 50 * len(codes))
    run2 = cc.discrete_run(start, samples * thin, _rng(args, "pi"), thin)
    counts = cc.shape_census(run2[1:], codes)
    if args.census:
        cc.write_census_csv(codes, counts, args.census, cc.enumerate_rooted_shapes(n))
    return [
        TestReport(f"transition frequencies within 4 SE (n={n})", float(np.max(z)), 4.0, steps),
        chi_square_gof(counts, np.ones(len(codes)), args.alpha, name=f"stationary chi-square over {len(codes)} shapes"),
    ]


@subcommand("chain-poissonized", "Poissonized chain: clade extinction times vs GW(-1)")
def cmd_chain_poissonized(args) -> list[TestReport]:
    n = int(args.scale_n or 4)
    m = args.replicas or 20_000
    tree = cc.RootedBinaryTree.caterpillar(n)
    v = min((u for u in range(2 * tree.n_leaves) if tree.is_internal(u)), key=lambda u: len(tree.leaves_below(u)))
    k = len(tree.leaves_below(v))
    horizon = 1e4
    ext = cc.clade_extinction_times(tree, v, m, horizon, _rng(args, "clade"))
    sigma, _ = gw.sample_gw(m, _rng(args, "gw"), start=k, horizon=horizon)
    return [two_sample_ks(ext, sigma, args.alpha, name=f"clade of {k} leaves extinction vs GW(-1) from {k}")]


def _write_streets(path, streets) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in streets:
            fh.write(s.to_json() + "\n")


@subcommand("entrance-law", "entrance law: street lengths, initial jumps, pair rate")
def cmd_entrance_law(args) -> list[TestReport]:
    n = float(args.scale_n or 1000)
    a = args.level
    size = args.replicas or 2000
    rng = _rng(args, "street")
    streets = [sj.sample_nonempty_reduced(a, n, rng).street(a, n) for _ in range(size)]
    if args.streets:
        _write_streets(args.streets, streets)
    lengths = np.array([s.I for s in streets])
    rep = mean_within_se(lengths, sj.street_length_mean(a, "nominal"),
                         name=f"non-empty street length mean a={a:.4g} vs 3 sqrt(a)/(2 sqrt(2 pi))")
    rep.metadata["corrected_mean"] = sj.street_length_mean(a, "corrected")
    m = 200_000
    v0, _ = sj.initial_jump_sampler(_rng(args, "tail"), size=m)
    return [
        rep,
        proportion_within_se(int(np.sum(v0 > 4.0)), m, 4.0 / 27.0 + 1.0 / 3.0, name="P(V > 4)"),
        relative_error(sj.initial_jump_pair_rate(1e4), 9.0 / 8.0, 0.02, name="n P(V0>n, V1>n) at n=1e4 vs 9/8"),
    ]


@subcommand("street-evolve", "entrance law pushed through the transition kernel")
def cmd_street_evolve(args) -> list[TestReport]:
    n = float(args.scale_n or 1000)
    a0, a1 = args.level, args.level1
    reps = args.replicas or 10_000
    rng = _rng(args, "push")
    pushed = [sj.transition_sample(sj.entrance_sample(a0, rng), a1, n, rng) for _ in range(reps)]
    if args.streets:
        _write_streets(args.streets, pushed)
    lengths = [s.I for s in pushed if not s.is_empty]
    target = sj.entrance_lengths(a1, reps, _rng(args, "target"))
    rep = two_sample_ks(lengths, target, args.alpha, name=f"entrance({a0:g}) pushed to {a1:g} vs entrance({a1:g})")
    rep.metadata["non_empty_fraction"] = len(lengths) / reps
    return [rep]


@subcommand("mailman-ktree", "mailman family, its k-tree and tree invariants")
def cmd_mailman_ktree(args) -> list[TestReport]:
    k = int(args.k)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fam = mm.sample_family(args.level, k, args.depth, _rng(args))
        tree = mm.ktree_from_mailmen(fam.members)
    if args.newick:
        with open(args.newick, "w", encoding="utf-8") as fh:
            fh.write(tree.to_newick() + "\n")
    if args.family:
        with open(args.family, "w", encoding="utf-8") as fh:
            fh.write(fam.to_json() + "\n")
    D = tree.distance_matrix()
    R = np.array([[mm.recipe_distance(x, y) if i != j else 0.0 for j, y in enumerate(fam.members)]
                  for i, x in enumerate(fam.members)])
    return [
        TestReport("four-point condition", mm.four_point_violation(D), 1e-9, k),
        TestReport("nested consistency violations", mm.nested_consistency_violation(fam.members), 0, k),
        TestReport("tree distance vs recipe distance", float(np.max(np.abs(R - D))), 1e-9, k),
        TestReport("leaf-tightness statistic", mm.leaf_tightness_stat(tree), math.inf, k,
                   {"coincident_leaves": tree.coincident}),
    ]


@subcommand("besq-t0", "BESQ(-1) absorption time: sampler vs Euler scheme")
def cmd_besq_t0(args) -> list[TestReport]:
    m = args.replicas or 5000
    x = args.x0
    batch = bq.simulate_besq_batch(-1.0, x, args.dt, 20.0 * max(x, 1.0), m, _rng(args, "sde"))
    exact = bq.hitting_time_sampler(x, 1.0, _rng(args, "exact"), m)
    return [
        ks_statistic(batch.absorption[0], lambda t: bq.hitting_time_cdf(t, x, 1.0), args.alpha,
                     name=f"SDE absorption (dt={args.dt:g}) vs x/(2G)"),
        ks_statistic(exact, lambda t: bq.hitting_time_cdf(t, x, 1.0), args.alpha, name="x/(2G) sampler vs its cdf"),
    ]


@subcommand("all-acceptance", "every acceptance criterion, one report each")
def cmd_all_acceptance(args) -> list[TestReport]:
    ids = [int(s) for s in args.criteria.split(",")] if args.criteria else None
    return acc.run_all(args.seed, quick=args.quick, criteria=ids)


# ------------------------------------------------------------------ plumbing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--replicas", "--n", type=int, default=None, dest="replicas",
                   help="sample size (subcommand default when omitted)")
    p.add_argument("--scale-n", type=int, default=None, help="scaling parameter n")
    p.add_argument("--out", default="-", help="report path ('-' for stdout)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subparsers = {}
    for name, (help_, _) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_)
        parser.subparsers[name] = p
        _common(p)
        if name == "levy-scale":
            p.add_argument("--xmax", type=float, default=10_000.0)
            p.add_argument("--step", type=float, default=0.01)
            p.add_argument("--table", help="write the W table as CSV 'x,W'")
        if name == "age-ppp":
            p.add_argument("--ages", help="write the first replica as CSV 'k,J'")
        if name == "chain-stationarity":
            p.add_argument("--census", help="write the shape census as CSV")
        if name in ("entrance-law", "street-evolve", "mailman-ktree"):
            p.add_argument("--level", type=float, default=1.0)
        if name in ("entrance-law", "street-evolve"):
            p.add_argument("--streets", help="write streets as JSON lines")
        if name == "street-evolve":
            p.add_argument("--level1", type=float, default=2.0)
        if name == "mailman-ktree":
            p.add_argument("--k", type=int, default=8)
            p.add_argument("--depth", type=int, default=mm.DEFAULT_DEPTH)
            p.add_argument("--newick", help="write the k-tree in Newick format")
            p.add_argument("--family", help="write the mailman family as JSON")
        if name == "besq-t0":
            p.add_argument("--x0", type=float, default=1.0)
            p.add_argument("--dt", type=float, default=1e-4)
        if name == "all-acceptance":
            p.add_argument("--quick", action="store_true", help="reduced sample sizes")
            p.add_argument("--criteria", help="comma-separated subset, e.g. 1,2,5")
    return parser


def _config_defaults(sub: argparse.ArgumentParser, conf: dict[str, str]) -> dict:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    out = {}
    for k, v in conf.items():
        if k not in actions:
            raise ConfigError(f"unknown config key: {k}")
        a = actions[k]
        if isinstance(a, argparse._StoreTrueAction):
            out[k] = v.lower() in ("1", "true", "yes", "on")
            continue
        try:
            out[k] = a.type(v) if a.type is not None else v
        except ValueError:
            raise ConfigError(f"bad value for {k}: {v!r}") from None
        if a.choices is not None and out[k] not in a.choices:
            raise ConfigError(f"bad value for {k}: {v!r}")
    return out


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser.subparsers[args.command]
        try:
            # config values become defaults, so explicit flags still win
            sub.set_defaults(**_config_defaults(sub, read_config(args.config)))
        except OSError as e:
            parser.error(f"cannot read config: {e}")
        except ConfigError as e:
            parser.error(str(e))
        args = parser.parse_args(argv)
    return args


def format_reports(reports: list[TestReport], fmt: str) -> str:
    return acc.reports_to_csv(reports) if fmt == "csv" else acc.reports_to_jsonl(reports)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    if args.out != "-":
        d = os.path.dirname(os.path.abspath(args.out))
        if not os.path.isdir(d) or not os.access(d, os.W_OK):
            print(f"ctlab: cannot write to {args.out}", file=sys.stderr)
            return 2
    _, fn = SUBCOMMANDS[args.command]
    try:
        reports = fn(args)
    except ValueError as e:
        # invalid parameter combinations surface from the library as ValueError
        print(f"ctlab {args.command}: error: {e}", file=sys.stderr)
        return 2
    text = format_reports(reports, args.format)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    for r in reports:
        print(r.line(), file=sys.stderr)
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
