"""Squared Bessel processes of negative dimension and related checks.

``simulate_besq`` integrates ``dZ = theta dt + 2 sqrt(Z) dB`` by
Euler-Maruyama with ``max(Z, 0)`` inside the root and absorption at the
first nonpositive grid value (for ``theta <= 0``). For dimension ``-theta``
(``theta > 0``) the hitting time of 0 from ``x`` has the law of
``x / (2 G)`` with ``G ~ Gamma(theta/2 + 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import integrate, special, stats

from ._rng import as_generator
from .stats_harness import TestReport, chi_square_gof


@dataclass
class DiffusionPath:
    """Values on a uniform grid; constant 0 after ``absorbed_at`` when absorbed."""

    times: np.ndarray
    values: np.ndarray
    absorbed_at: Optional[float] = None

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,value\n")
            for t, v in zip(self.times, self.values):
                fh.write(f"{t:.17g},{v:.17g}\n")


@numba.njit(cache=True)
def _euler_path(rng, theta, x0, dt, n_steps, absorb):
    out = np.zeros(n_steps + 1)
    out[0] = x0
    z = x0
    sq = math.sqrt(dt)
    hit = -1
    for k in range(n_steps):
        z = z + theta * dt + 2.0 * math.sqrt(max(z, 0.0)) * sq * rng.standard_normal()
        if z <= 0.0:
            if absorb:
                hit = k + 1
                break
            z = 0.0
        out[k + 1] = z
    return out, hit


def simulate_besq(theta: float, x0: float, dt: float, horizon: float, rng=None) -> DiffusionPath:
    """Euler-Maruyama path of ``Z = x0 + 2 int sqrt(Z) dB + theta t`` on ``[0, horizon]``.

    For ``theta <= 0`` the path is absorbed at the first grid point where
    it is nonpositive; otherwise negative values are set to 0. The scheme
    has first-order weak bias in ``dt``.
    """
    if x0 <= 0 or dt <= 0:
        raise ValueError("x0 and dt must be positive")
    rng = as_generator(rng)
    n = int(math.ceil(horizon / dt))
    vals, hit = _euler_path(rng, float(theta), float(x0), float(dt), n, theta <= 0)
    times = np.arange(n + 1) * dt
    return DiffusionPath(times, vals, None if hit < 0 else float(hit * dt))


@numba.njit(cache=True)
def _euler_batch(rng, theta, x0, dt, n_steps, size, obs_steps, refine):
    """Absorption times and observed values for ``size`` paths.

    Each path is integrated at ``dt * 2^j`` for ``j = 0..refine`` from one
    set of Brownian increments (coarse steps sum fine increments).
    """
    levels = refine + 1
    hit = np.full((levels, size), np.inf)
    obs = np.zeros((levels, size, obs_steps.size))
    sq = math.sqrt(dt)
    for i in range(size):
        z = np.full(levels, x0)
        alive = np.ones(levels, dtype=np.bool_)
        acc = np.zeros(levels)
        nxt = 0
        for k in range(n_steps):
            dw = sq * rng.standard_normal()
            for j in range(levels):
                acc[j] += dw
                span = 1 << j
                if (k + 1) % span == 0:
                    if alive[j]:
                        h = dt * span
                        z[j] = z[j] + theta * h + 2.0 * math.sqrt(max(z[j], 0.0)) * acc[j]
                        if z[j] <= 0.0:
                            z[j] = 0.0
                            if theta <= 0.0:
                                alive[j] = False
                                hit[j, i] = (k + 1) * dt
                    acc[j] = 0.0
            while nxt < obs_steps.size and obs_steps[nxt] == k + 1:
                for j in range(levels):
                    obs[j, i, nxt] = z[j]
                nxt += 1
            if not alive[levels - 1] and not alive[0] and nxt >= obs_steps.size:
                done = True
                for j in range(levels):
                    if alive[j]:
                        done = False
                if done:
                    break
    return hit, obs


@dataclass
class BesqBatch:
    dt: np.ndarray          # step of each refinement level
    absorption: np.ndarray  # (levels, size); inf if not absorbed by the horizon
    observed: np.ndarray    # (levels, size, len(obs_times))
    obs_times: np.ndarray
    horizon: float


def simulate_besq_batch(theta: float, x0: float, dt: float, horizon: float, size: int, rng=None,
                        obs_times: Sequence[float] = (), refine: int = 0) -> BesqBatch:
    """Many Euler paths; ``refine > 0`` also integrates each path at steps ``dt*2, dt*4, ...``.

    The coarser schemes reuse the fine Brownian increments, so differences
    between levels isolate discretisation bias.
    """
    rng = as_generator(rng)
    n = int(math.ceil(horizon / dt))
    span = 1 << refine
    n = int(math.ceil(n / span) * span)
    obs = np.array([int(round(t / dt)) for t in obs_times], dtype=np.int64)
    if obs.size and (obs.min() < 1 or obs.max() > n):
        raise ValueError("observation times outside the grid")
    hit, val = _euler_batch(rng, float(theta), float(x0), float(dt), n, int(size), obs, int(refine))
    return BesqBatch(dt * 2.0 ** np.arange(refine + 1), hit, val, np.asarray(obs_times, dtype=float), n * dt)


# ------------------------------------------------------------------ hitting time


def hitting_time_sampler(x: float, theta: float, rng=None, size: Optional[int] = None):
    """Hitting time of 0 for dimension ``-theta`` from ``x``: ``x / (2G)``, ``G ~ Gamma(theta/2 + 1)``."""
    if theta > 2 or theta / 2 + 1 <= 0:
        raise ValueError("theta must lie in (-2, 2]")
    if x <= 0:
        raise ValueError("x must be positive")
    rng = as_generator(rng)
    g = rng.gamma(theta / 2.0 + 1.0, 1.0, size)
    return x / (2.0 * g)


def hitting_time_cdf(t, x: float, theta: float):
    """``P(T0 <= t) = P(G >= x/(2t))``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        out = special.gammaincc(theta / 2.0 + 1.0, x / (2.0 * np.where(t > 0, t, np.inf)))
    out = np.where(t > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def hitting_time_mean(x: float, theta: float) -> float:
    """``E[T0] = x / (2 (theta/2))`` for ``theta > 0``; ``x`` at ``theta = 1``."""
    if theta <= 0:
        return math.inf
    return x / theta


def expected_stopped_time(t: float, x: float, theta: float = 1.0) -> float:
    """``E[t ^ T0] = int_0^t P(T0 > s) ds``."""
    return integrate.quad(lambda s: 1.0 - hitting_time_cdf(s, x, theta), 0.0, t, epsabs=1e-12, epsrel=1e-12)[0]


def absorbed_mean(t: float, x: float) -> float:
    """``E[Z_t]`` for drift ``-1`` with absorption at 0: ``x - E[t ^ T0]``."""
    return x - expected_stopped_time(t, x, 1.0)


# ------------------------------------------------------------------ GW comparison


@dataclass
class ConvergenceReport:
    n: int
    x: float
    times: np.ndarray
    gw_mean: np.ndarray
    gw_var: np.ndarray
    gw_se: np.ndarray
    besq_mean: np.ndarray
    besq_var: np.ndarray
    besq_se: np.ndarray
    exact_mean: np.ndarray
    reports: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def _var_se(x: np.ndarray) -> float:
    # standard error of the sample variance
    m = x.mean()
    n = x.size
    m4 = np.mean((x - m) ** 4)
    v = x.var(ddof=1)
    return float(math.sqrt(max(m4 - v * v * (n - 3) / (n - 1), 0.0) / n))


def gw_besq_convergence_check(n: int, x: float, times: Sequence[float], replicas: int, rng=None,
                              dt: float = 1e-4, k: float = 3.0) -> ConvergenceReport:
    """Compare ``Z_{nt}/n`` for the branching process started at ``nx`` with the diffusion at grid times.

    Means and variances are compared within ``k`` joint standard errors;
    the exact absorbed mean is reported as well.
    """
    from .gw_emigration import sample_gw

    start = int(round(n * x))
    if start < 1 or abs(start - n * x) > 1e-9:
        raise ValueError("n*x must be a positive integer")
    rng = as_generator(rng)
    times = np.asarray(times, dtype=float)
    _, z = sample_gw(replicas, rng, start=start, obs_times=tuple(n * times), horizon=n * float(times.max()))
    zg = np.asarray(z, dtype=float).reshape(replicas, times.size) / n
    b = simulate_besq_batch(-1.0, x, dt, float(times.max()), replicas, rng, obs_times=times)
    zb = b.observed[0]
    gm, bm = zg.mean(0), zb.mean(0)
    gv, bv = zg.var(0, ddof=1), zb.var(0, ddof=1)
    gse, bse = zg.std(0, ddof=1) / math.sqrt(replicas), zb.std(0, ddof=1) / math.sqrt(replicas)
    reports = []
    for i, t in enumerate(times):
        joint = math.hypot(gse[i], bse[i])
        reports.append(TestReport(f"mean t={t:g}", abs(gm[i] - bm[i]) / joint, k, 2 * replicas))
        jv = math.hypot(_var_se(zg[:, i]), _var_se(zb[:, i]))
        reports.append(TestReport(f"variance t={t:g}", abs(gv[i] - bv[i]) / jv, k, 2 * replicas))
    exact = np.array([absorbed_mean(t, x) for t in times])
    return ConvergenceReport(n, x, times, gm, gv, gse, bm, bv, bse, exact, reports)


# ------------------------------------------------------------------ time change


@dataclass
class NWFPath:
    """Simplex-valued path ``mu`` (shape ``(3, m)``) at times ``4 C_t``."""

    time: np.ndarray
    mu: np.ndarray
    clock: np.ndarray
    tau: float


def nwf_time_change(z1: DiffusionPath, z2: DiffusionPath, z3: DiffusionPath) -> NWFPath:
    """Normalise three absorbed paths and run them on the additive clock ``4 C_t``.

    ``C_t = int_0^{t ^ tau} ds / zeta(s)`` by the trapezoid rule, with
    ``zeta = z1 + z2 + z3`` and ``tau`` the first absorption of any
    coordinate. The path is returned on grid points up to ``tau``.
    """
    t = z1.times
    if not (np.array_equal(t, z2.times) and np.array_equal(t, z3.times)):
        raise ValueError("paths must share a grid")
    Z = np.vstack([z1.values, z2.values, z3.values])
    if np.any(Z[:, 0] <= 0):
        raise ValueError("all coordinates must start positive")
    dead = np.flatnonzero(np.any(Z <= 0, axis=0))
    stop = int(dead[0]) if dead.size else t.size
    tau = float(t[stop]) if dead.size else math.inf
    Z = Z[:, :stop]
    zeta = Z.sum(0)
    if np.any(zeta <= 0):
        raise RuntimeError("total mass vanished before a coordinate was absorbed")
    inv = 1.0 / zeta
    C = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(t[:stop]))])
    return NWFPath(4.0 * C, Z / zeta, C, tau)


# ------------------------------------------------------------------ duality


def duality_check(x: float, t: float, size: int, rng=None, dt: float = 1e-4, bins: int = 12,
                  alpha: float = 0.01) -> TestReport:
    """Histogram of dimension ``-1`` marginals against the dual dimension-5 density.

    ``P_x(Z_t in B, t < T0) = int_B p^5_t(y, x) dy`` with
    ``p^5_t(y, x) = ncx2.pdf(x/t; 5, y/t) / t``. Bins are equiprobable under
    the dual measure; the killed mass forms an extra cell.
    """
    rng = as_generator(rng)
    b = simulate_besq_batch(-1.0, x, dt, t, size, rng, obs_times=[t])
    z = b.observed[0, :, 0]

    def dens(y):
        return stats.ncx2.pdf(x / t, 5, y / t) / t

    ymax = x + 12.0 * math.sqrt(4.0 * x * t + t * t) + 10.0 * t
    alive_mass = integrate.quad(dens, 0.0, ymax, limit=200)[0]
    grid = np.linspace(1e-12, ymax, 4001)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens(grid[1:]) + dens(grid[:-1])) * np.diff(grid))])
    qs = np.interp(np.linspace(0, cdf[-1], bins + 1), cdf, grid)
    qs[0], qs[-1] = 0.0, np.inf
    alive = z[z > 0]
    counts = np.histogram(alive, qs)[0]
    expected = np.full(bins, alive_mass / bins)
    counts = np.append(counts, size - alive.size)
    expected = np.append(expected, 1.0 - alive_mass)
    return chi_square_gof(counts, expected, alpha, "besq duality")


@dataclass
class GapTrend:
    dt: np.ndarray     # coarse step of each compared pair
    gap: np.ndarray    # E[T_dt ^ H] - E[T_{dt/2} ^ H]
    se: np.ndarray
    ratios: np.ndarray  # gap(dt) / gap(dt/2)


def discretisation_gap_trend(x: float, base_dt: float, levels: int, size: int, rng=None,
                             horizon: float = 5.0) -> GapTrend:
    """Coupled estimate of how the absorption-time bias scales with the step.

    Paths at ``base_dt * 2^j`` share Brownian increments; the gap at ``dt``
    is the mean difference of capped absorption times between ``dt`` and
    ``dt/2``. For a first-order scheme successive ratios are near 2.
    """
    b = simulate_besq_batch(-1.0, x, base_dt, horizon, size, rng, refine=levels)
    T = np.minimum(b.absorption, b.horizon)
    d = T[1:] - T[:-1]
    gap = d.mean(1)
    se = d.std(1, ddof=1) / math.sqrt(size)
    return GapTrend(b.dt[1:], gap, se, gap[1:] / gap[:-1])
