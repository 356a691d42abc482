r"""Compound Poisson process with drift -1 and its fluctuation identities.

The process is :math:`X_t = x - t + \sum_{i \le N_t} \zeta_i` with a
unit-rate Poisson clock and jumps :math:`\zeta_i` whose survival function
is :math:`\bar L(u) = (1+2u)^{-3/2}`. It has zero mean, so it is a
martingale that oscillates.

The scale function :math:`W` solves :math:`W = 1 + W \star \bar L` with
:math:`W(0) = 1` and has Laplace transform :math:`1/\varphi`. Exit,
ladder, undershoot and overshoot laws are expressed through :math:`W`.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy.signal import fftconvolve

from ._rng import as_generator
from ._special import upper_gamma_scaled

SQRT2 = math.sqrt(2.0)
#: Growth constant of the scale function, ``W(x) / sqrt(x) -> 2 sqrt(2) / pi``.
W_ASYMPTOTE = 2.0 * SQRT2 / math.pi
#: Growth constant quoted alongside the scale-function criterion (``3/sqrt(2 pi)``).
W_ASYMPTOTE_NOMINAL = 3.0 / math.sqrt(2.0 * math.pi)


# ------------------------------------------------------------------ basics


def laplace_exponent(theta):
    r"""Laplace exponent :math:`\varphi(\theta) = \theta^{3/2} e^{\theta/2}\Gamma(1/2,\theta/2)/\sqrt2`."""
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0):
        raise ValueError("theta must be nonnegative")

    def one(t: float) -> float:
        return 0.0 if t == 0 else t**1.5 * upper_gamma_scaled(0.5, t / 2.0) / SQRT2

    out = np.vectorize(one, otypes=[float])(th)
    return float(out) if out.ndim == 0 else out


def jump_sf(u):
    """Jump survival function ``(1 + 2u)^(-3/2)``."""
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    out = (1.0 + 2.0 * u) ** -1.5
    return float(out) if out.ndim == 0 else out


def jump_density(u):
    """Jump density ``3 (1 + 2u)^(-5/2)``."""
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 0, 3.0 * (1.0 + 2.0 * np.maximum(u, 0.0)) ** -2.5, 0.0)
    return float(out) if out.ndim == 0 else out


def jump_quantile(p):
    """Inverse of the jump distribution function."""
    p = np.asarray(p, dtype=float)
    out = ((1.0 - p) ** (-2.0 / 3.0) - 1.0) / 2.0
    return float(out) if out.ndim == 0 else out


def sample_jumps(size, rng=None) -> np.ndarray:
    """Draw jump sizes by inversion."""
    rng = as_generator(rng)
    return jump_quantile(rng.random(size))


def ladder_height_sf(u):
    """Survival function of the ascending ladder height, ``(1 + 2u)^(-1/2)``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    out = (1.0 + 2.0 * u) ** -0.5
    return float(out) if out.ndim == 0 else out


def ladder_height_quantile(p):
    p = np.asarray(p, dtype=float)
    out = ((1.0 - p) ** -2.0 - 1.0) / 2.0
    return float(out) if out.ndim == 0 else out


def crossing_jump_sf(x):
    """Survival function of the jump that first crosses the start level: ``x L(x) + G(x)``."""
    x = np.asarray(x, dtype=float)
    out = x * (1.0 + 2.0 * x) ** -1.5 + (1.0 + 2.0 * x) ** -0.5
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------ paths


STOP_HORIZON = "horizon"
STOP_LEVEL = "hit_level"
STOP_EXIT = "exited_interval"


@dataclass
class CompoundPoissonPath:
    """Sample path stored exactly as jump epochs and sizes.

    ``end_time`` is where observation stops; ``stop_reason`` is one of
    ``"horizon"``, ``"hit_level"`` or ``"exited_interval"`` and ``side``
    records ``"top"``/``"bottom"`` for interval exits.
    """

    jump_times: np.ndarray
    jump_sizes: np.ndarray
    start: float
    end_time: float
    stop_reason: str
    level: Optional[float] = None
    side: Optional[str] = None
    drift: float = -1.0

    def value_at(self, t):
        """Path value at time(s) ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        csum = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
        idx = np.searchsorted(self.jump_times, t, side="right")
        out = self.start + self.drift * t + csum[idx]
        return float(out) if out.ndim == 0 else out

    def pre_jump_values(self) -> np.ndarray:
        csum = np.concatenate([[0.0], np.cumsum(self.jump_sizes)[:-1]])
        return self.start - self.jump_times + csum

    @property
    def end_value(self) -> float:
        return float(self.value_at(self.end_time))


@numba.njit(cache=True)
def _grow(arr, n):
    out = np.empty(max(2 * arr.size, n + 16))
    out[: arr.size] = arr
    return out


@numba.njit(cache=True)
def _path_kernel(rng, start, mode, level, lo, horizon, max_jumps):
    # mode 0: horizon, 1: first passage above level, 2: exit (lo, level)
    times = np.empty(64)
    sizes = np.empty(64)
    m = 0
    t = 0.0
    x = start
    code = 0  # 0 horizon, 1 level/top, 2 bottom, 3 budget
    while True:
        e = rng.standard_exponential()
        if mode == 2 and x - e <= lo:
            t += x - lo
            x = lo
            code = 2
            break
        if t + e > horizon:
            x -= horizon - t
            t = horizon
            code = 0
            break
        t += e
        x -= e
        z = ((1.0 - rng.random()) ** (-2.0 / 3.0) - 1.0) / 2.0
        if m >= times.size:
            times = _grow(times, m)
            sizes = _grow(sizes, m)
        times[m] = t
        sizes[m] = z
        m += 1
        crossed = x <= level and x + z > level
        x += z
        if mode >= 1 and crossed:
            code = 1
            break
        if m >= max_jumps:
            code = 3
            break
    return times[:m].copy(), sizes[:m].copy(), t, code


def simulate_levy(start: float, stop: str = STOP_HORIZON, rng=None, *, horizon: float = math.inf,
                  level: Optional[float] = None, lo: Optional[float] = None,
                  max_jumps: int = 50_000_000) -> CompoundPoissonPath:
    """Exact event-driven simulation.

    Parameters
    ----------
    start : float
    stop : {"horizon", "hit_level", "exited_interval"}
        ``hit_level`` stops at the first jump across ``level``;
        ``exited_interval`` stops on leaving ``(lo, level)``, by drift at
        the bottom or by a jump at the top.
    horizon : float
        Time limit; required (finite) for ``stop="horizon"``.
    """
    rng = as_generator(rng)
    if stop == STOP_HORIZON:
        if not math.isfinite(horizon):
            raise ValueError("a finite horizon is required")
        mode, lvl, low = 0, math.inf, -math.inf
    elif stop == STOP_LEVEL:
        if level is None:
            raise ValueError("level required")
        mode, lvl, low = 1, float(level), -math.inf
    elif stop == STOP_EXIT:
        if level is None or lo is None:
            raise ValueError("lo and level required")
        mode, lvl, low = 2, float(level), float(lo)
        if not (low < start < lvl):
            raise ValueError("start must lie inside (lo, level)")
    else:
        raise ValueError(f"unknown stopping rule {stop!r}")
    times, sizes, t_end, code = _path_kernel(rng, float(start), mode, lvl, low, float(horizon), int(max_jumps))
    if code == 3:
        raise RuntimeError("jump budget exhausted before the stopping rule triggered")
    reason = {0: STOP_HORIZON, 1: STOP_LEVEL if mode == 1 else STOP_EXIT, 2: STOP_EXIT}[code]
    side = None
    if mode == 2:
        side = "top" if code == 1 else ("bottom" if code == 2 else None)
    return CompoundPoissonPath(times, sizes, float(start), float(t_end), reason,
                               level=level, side=side)


@dataclass
class CrossingRecord:
    """First upcrossing of ``level``: time, undershoot ``J`` and overshoot ``I``."""

    level: float
    tau: float
    undershoot: float
    overshoot: float

    @property
    def jump(self) -> float:
        return self.undershoot + self.overshoot


@numba.njit(cache=True)
def _passage_batch(rng, n, start, level, floor, max_jumps):
    tau = np.full(n, np.nan)
    und = np.full(n, np.nan)
    ove = np.full(n, np.nan)
    status = np.zeros(n, dtype=np.int8)  # 1 crossed, 2 hit floor, 3 budget
    for p in range(n):
        x = start
        t = 0.0
        for _ in range(max_jumps):
            e = rng.standard_exponential()
            if x - e <= floor:
                t += x - floor
                status[p] = 2
                tau[p] = t
                break
            t += e
            x -= e
            z = ((1.0 - rng.random()) ** (-2.0 / 3.0) - 1.0) / 2.0
            if x + z > level:
                tau[p] = t
                und[p] = level - x
                ove[p] = x + z - level
                status[p] = 1
                break
            x += z
        if status[p] == 0:
            status[p] = 3
    return tau, und, ove, status


def first_passage_batch(n: int, start: float, level: float, rng=None, floor: float = -math.inf,
                        max_jumps: int = 10_000_000):
    """Simulate ``n`` independent first upcrossings of ``level``.

    Paths that drift down to ``floor`` first are killed.

    Returns
    -------
    tau, undershoot, overshoot : ndarray
        NaN for killed paths (``tau`` holds the killing time).
    status : ndarray of int8
        1 crossed, 2 killed at ``floor``, 3 jump budget exhausted.
    """
    if start > level:
        raise ValueError("start must not exceed the level")
    rng = as_generator(rng)
    return _passage_batch(rng, int(n), float(start), float(level), float(floor), int(max_jumps))


def first_passage_record(start: float, a: float, rng=None, max_jumps: int = 10_000_000) -> CrossingRecord:
    """First jump across level ``a`` starting from ``start <= a``."""
    tau, j, i, st = first_passage_batch(1, start, a, rng, max_jumps=max_jumps)
    if st[0] != 1:
        raise RuntimeError("jump budget exhausted")
    return CrossingRecord(float(a), float(tau[0]), float(j[0]), float(i[0]))


def exit_frequency(x: float, y: float, n: int, rng=None) -> float:
    """Monte-Carlo frequency of leaving ``(-y, x)`` from 0 through the bottom."""
    _, _, _, st = first_passage_batch(n, 0.0, x, rng, floor=-y)
    return float(np.mean(st == 2))


# ------------------------------------------------------------------ scale function


@numba.njit(cache=True)
def _volterra_leaf(w, k, acc, lo, hi, h, denom):
    start = max(lo, 1)
    for i in range(start, hi):
        s = acc[i]
        for j in range(start, i):
            s += w[j] * k[i - j]
        w[i] = (1.0 + h * (s + 0.5 * k[i] * w[0])) / denom


def _solve_renewal(n_points: int, step: float, leaf: int = 128) -> np.ndarray:
    """Trapezoidal solution of ``W = 1 + W * Lbar`` on ``n_points`` grid nodes.

    A divide-and-conquer scheme adds the history of each left half to the
    right half with one FFT convolution, giving ``O(N log^2 N)`` work.
    """
    u = np.arange(n_points) * step
    k = (1.0 + 2.0 * u) ** -1.5
    w = np.zeros(n_points)
    w[0] = 1.0
    acc = np.zeros(n_points)
    denom = 1.0 - 0.5 * step * k[0]
    stack = [(0, n_points, False)]
    # explicit stack: (lo, hi, left_done)
    while stack:
        lo, hi, left_done = stack.pop()
        if hi - lo <= leaf:
            _volterra_leaf(w, k, acc, lo, hi, step, denom)
            continue
        mid = (lo + hi) // 2
        if not left_done:
            stack.append((lo, hi, True))
            stack.append((lo, mid, False))
            continue
        a = max(lo, 1)
        if mid > a:
            c = fftconvolve(w[a:mid], k[1:hi - a])
            acc[mid:hi] += c[mid - a - 1:hi - a - 1]
        stack.append((mid, hi, False))
    return w


@dataclass(frozen=True)
class ScaleFunctionTable:
    """Grid values ``W(0), W(step), ..., W(x_max)``; immutable."""

    step: float
    values: np.ndarray = field(repr=False)

    @property
    def x_max(self) -> float:
        return self.step * (self.values.size - 1)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.values.size) * self.step

    def __call__(self, x):
        """Linear interpolation; ``W = 0`` on the negative half-line."""
        x = np.asarray(x, dtype=float)
        if np.any(x > self.x_max * (1 + 1e-12)):
            raise ValueError(f"argument beyond table range {self.x_max}")
        pos = np.clip(x, 0.0, None) / self.step
        i = np.minimum(pos.astype(np.int64), self.values.size - 2)
        frac = pos - i
        out = self.values[i] * (1 - frac) + self.values[i + 1] * frac
        out = np.where(x < 0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        """``W'(x)`` from the renewal equation, ``W' = W - W * l`` (l the jump density)."""
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.grid, self._derivative_values)
        return float(out) if out.ndim == 0 else out

    @functools.cached_property
    def _derivative_values(self) -> np.ndarray:
        return np.gradient(self.values, self.step, edge_order=2)

    def to_csv(self, path, every: int = 1) -> None:
        g = self.grid[::every]
        v = self.values[::every]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,W\n")
            for a, b in zip(g, v):
                fh.write(f"{a:.10g},{b:.17g}\n")


@functools.lru_cache(maxsize=8)
def scale_function(x_max: float, step: float = 0.01) -> ScaleFunctionTable:
    """Tabulate the scale function on ``[0, x_max]``.

    Raises
    ------
    ValueError
        If ``step > 0.01``.
    """
    if step > 1e-2 + 1e-15:
        raise ValueError("step too coarse (must be <= 0.01)")
    if x_max <= 0:
        raise ValueError("x_max must be positive")
    n_points = int(math.ceil(x_max / step)) + 1
    w = _solve_renewal(n_points, step)
    w.setflags(write=False)
    return ScaleFunctionTable(float(step), w)


def scale_laplace_check(table: ScaleFunctionTable, theta: float) -> tuple[float, float]:
    r"""Return ``(numeric, exact)`` for :math:`\int_0^\infty e^{-\theta x} W(x)dx = 1/\varphi(\theta)`.

    The numeric integral covers the table and adds the tail beyond
    ``x_max`` from the square-root growth of ``W``, fitted at the table end.
    """
    x = table.grid
    w = table.values
    body = float(np.trapezoid(np.exp(-theta * x) * w, x))
    xm = table.x_max
    c = w[-1] / math.sqrt(xm)
    # int_xm^inf c sqrt(x) e^{-theta x} dx
    from scipy.special import gammaincc, gamma

    tail = c * gamma(1.5) * gammaincc(1.5, theta * xm) / theta**1.5
    return body + float(tail), 1.0 / float(laplace_exponent(theta))


def exit_probability(x: float, y: float, table: ScaleFunctionTable) -> float:
    """Probability that the process from 0 leaves ``(-y, x)`` at the bottom: ``W(x)/W(x+y)``."""
    if x < 0 or y < 0:
        raise ValueError("x and y must be nonnegative")
    if x + y > table.x_max:
        raise ValueError("out of table range")
    return float(table(x) / table(x + y))


def crossing_probability_q(a: float, table: ScaleFunctionTable) -> float:
    """Probability of returning above ``a`` from ``a`` before hitting 0: ``1 - 1/W(a)``."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    return float(1.0 - 1.0 / table(a))


def joint_density_IJ(a: float, u, v, table: ScaleFunctionTable):
    """Joint density of overshoot ``u`` and undershoot ``v`` at level ``a`` from 0.

    ``3(1+2(u+v))^(-5/2) (W(a) - W(a - a^v) + 1{v >= a})``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w_a = table(a)
    inner = w_a - table(a - np.minimum(a, v)) + (v >= a)
    out = jump_density(u + v) * inner
    return float(out) if np.ndim(out) == 0 else out


def undershoot_density_j(a: float, v, table: ScaleFunctionTable):
    """Marginal density of the undershoot at level ``a`` from 0: ``Lbar(v)(W(a) - W(a-a^v) + 1{v>=a})``."""
    v = np.asarray(v, dtype=float)
    inner = table(a) - table(a - np.minimum(a, v)) + (v >= a)
    out = jump_sf(v) * inner
    return float(out) if np.ndim(out) == 0 else out


def killed_undershoot_density(a0: float, a1: float, v, table: ScaleFunctionTable):
    """Defective density of ``J_{a1}`` from ``a0`` on the event of crossing before hitting 0."""
    v = np.asarray(v, dtype=float)
    rho = table(a1 - a0) / table(a1)
    out = undershoot_density_j(a1 - a0, v, table) - rho * undershoot_density_j(a1, v, table)
    out = np.where((v > 0) & (v < a1), out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def conditional_undershoot_density_r(a: float, v, table: ScaleFunctionTable):
    """Undershoot density at ``a`` given a return above ``a`` before hitting 0.

    ``q_a^{-1} (W(a-v)/W(a)) Lbar(v)`` on ``0 < v < a``.
    """
    v = np.asarray(v, dtype=float)
    if np.any((v <= 0) | (v >= a)):
        raise ValueError("v must lie in (0, a)")
    q = crossing_probability_q(a, table)
    out = table(a - v) / table(a) * jump_sf(v) / q
    return float(out) if np.ndim(out) == 0 else out


def conditional_undershoot_cdf(a: float, table: ScaleFunctionTable):
    """Grid and distribution function of the conditioned undershoot on ``[0, a]``."""
    m = max(int(round(a / table.step)), 1)
    v = np.linspace(0.0, a, m + 1)
    q = crossing_probability_q(a, table)
    dens = table(a - v) / table(a) * jump_sf(v) / q
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(v))])
    return v, cdf


# ------------------------------------------------------------------ scaled limits


def limit_rate_gstar(a: float, v, form: str = "nominal"):
    r"""Limiting rate of street ages at level ``a``.

    ``form="nominal"``: :math:`(1-\sqrt{(a-v)/a})\,v^{-3/2}`.
    ``form="corrected"``: :math:`\tfrac12\sqrt{(a-v)/a}\,v^{-3/2}`, the limit of
    :math:`\sqrt{2n^3} r_{na}(nv)` implied by ``W(x) ~ (2 sqrt 2/pi) sqrt x``.
    """
    v = np.asarray(v, dtype=float)
    if np.any((v <= 0) | (v > a)):
        raise ValueError("v must lie in (0, a]")
    s = np.sqrt((a - v) / a)
    if form == "nominal":
        out = (1.0 - s) * v**-1.5
    elif form == "corrected":
        out = 0.5 * s * v**-1.5
    else:
        raise ValueError(form)
    return float(out) if out.ndim == 0 else out


def limit_density_h(a: float, v, form: str = "nominal"):
    r"""Limiting density of ``J_{na}/n`` from 0.

    :math:`c\,v^{-3/2}(\sqrt a - \sqrt{a - a\wedge v})` with ``c = 3/(4 pi)``
    (``nominal``) or ``c = 1/pi`` (``corrected``, a probability density).
    """
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("v must be positive")
    c = {"nominal": 3.0 / (4.0 * math.pi), "corrected": 1.0 / math.pi}[form]
    out = c * v**-1.5 * (math.sqrt(a) - np.sqrt(a - np.minimum(a, v)))
    return float(out) if out.ndim == 0 else out


def limit_density_hstar(a0: float, a1: float, v, form: str = "nominal"):
    r"""Limiting density of ``J_{na1}/n`` from ``na0`` given no visit to 0.

    With ``s = sqrt((a1-a0)/a1)`` the bracket is
    :math:`h_{a_1-a_0}(v) - s\,h_{a_1}(v)`; the prefactor is ``(1 - s)``
    (``nominal``) or ``1/(1 - s)`` (``corrected``, which normalizes).
    """
    if not 0 < a0 < a1:
        raise ValueError("requires 0 < a0 < a1")
    s = math.sqrt((a1 - a0) / a1)
    bracket = limit_density_h(a1 - a0, v, form) - s * limit_density_h(a1, v, form)
    pref = (1.0 - s) if form == "nominal" else 1.0 / (1.0 - s)
    out = pref * np.asarray(bracket)
    return float(out) if np.ndim(out) == 0 else out


def scaled_rate_g(a: float, v, n: float, table: ScaleFunctionTable):
    """Finite-``n`` street-age rate ``sqrt(2 n^3) r_{na}(nv)``."""
    v = np.asarray(v, dtype=float)
    return math.sqrt(2.0 * n**3) * conditional_undershoot_density_r(n * a, n * v, table)


def scaled_density_h(a: float, v, n: float, table: ScaleFunctionTable):
    """Finite-``n`` density of ``J_{na}/n`` from 0."""
    return n * np.asarray(undershoot_density_j(n * a, n * np.asarray(v, dtype=float), table))


def scaled_density_hstar(a0: float, a1: float, v, n: float, table: ScaleFunctionTable):
    """Finite-``n`` density of ``J_{na1}/n`` from ``na0`` given no visit to 0."""
    v = np.asarray(v, dtype=float)
    rho = table(n * (a1 - a0)) / table(n * a1)
    return n * np.asarray(killed_undershoot_density(n * a0, n * a1, n * v, table)) / (1.0 - rho)


def stable_overshoot_cdf(a: float, u):
    r"""Overshoot law above ``a`` of a Stable(1/2) subordinator started at 0.

    The normalized overshoot ``z = u/a`` has the generalized arcsine density
    :math:`z^{-1/2}(1+z)^{-1}/\pi`, so the distribution function is
    :math:`(2/\pi)\arctan\sqrt{u/a}`.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    u = np.asarray(u, dtype=float)
    out = 2.0 / math.pi * np.arctan(np.sqrt(np.maximum(u, 0.0) / a))
    return float(out) if out.ndim == 0 else out


@numba.njit(cache=True)
def _ladder_walk_overshoot(rng, n, level):
    out = np.empty(n)
    for p in range(n):
        s = 0.0
        while s <= level:
            s += ((1.0 - rng.random()) ** -2.0 - 1.0) / 2.0
        out[p] = s - level
    return out


def ladder_walk_overshoot(level: float, size: int, rng=None) -> np.ndarray:
    """Overshoots above ``level`` of a random walk with ladder-height increments."""
    rng = as_generator(rng)
    return _ladder_walk_overshoot(rng, int(size), float(level))


# ------------------------------------------------------------------ excursion clock law


def crossing_jump_quantile(p):
    """Inverse of the law with survival function ``x Lbar(x) + Gbar(x)``.

    With ``s = (1+2x)^(-1/2)`` the survival function is ``(3s - s^3)/2``,
    so the root of a depressed cubic gives ``s`` in closed form.
    """
    u = 1.0 - np.asarray(p, dtype=float)
    s = 2.0 * np.cos((np.arccos(-u) - 2.0 * math.pi) / 3.0)
    s = np.clip(s, 1e-300, 1.0)
    out = (s**-2 - 1.0) / 2.0
    return float(out) if out.ndim == 0 else out


def crossing_jump_density(x):
    """Density ``x * 3 (1+2x)^(-5/2)`` (size-biased jump law)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, x * 3.0 * (1.0 + 2.0 * np.maximum(x, 0.0)) ** -2.5, 0.0)
    return float(out) if out.ndim == 0 else out


@numba.njit(cache=True)
def _crossing_jump(rng):
    u = 1.0 - rng.random()
    s = 2.0 * math.cos((math.acos(-u) - 2.0 * math.pi) / 3.0)
    if s < 1e-300:
        s = 1e-300
    if s > 1.0:
        s = 1.0
    return (1.0 / (s * s) - 1.0) / 2.0


@numba.njit(cache=True)
def _jump(rng):
    return ((1.0 - rng.random()) ** (-2.0 / 3.0) - 1.0) / 2.0


START_JUMP = "jump"
START_CROSSING = "crossing"


def _start_density(start: str):
    if start == START_JUMP:
        return jump_density, jump_sf
    if start == START_CROSSING:
        return crossing_jump_density, crossing_jump_sf
    raise ValueError(f"unknown start law {start!r}")


def excursion_undershoot_law(level: float, table: ScaleFunctionTable, start: str = START_CROSSING):
    r"""First undershoot at ``level`` of an excursion started by one jump from 0.

    The excursion jumps from 0 to ``y`` drawn from the start law (density
    ``f``) and then follows the process until it crosses ``level = b`` or
    drifts back to 0. On the crossing event the undershoot has defective
    density

    .. math:: \bar L(x)\,[W(b-x) K(b)/W(b) - K(b-x)],\quad K = f \star W,

    on ``0 < x < b`` plus an atom ``P(y > b)`` at ``x = b``.
    ``start="crossing"`` uses the size-biased law of excursions of the
    process reflected at its infimum; ``start="jump"`` uses the jump law
    itself, for which ``K = W - W'``.

    Returns
    -------
    x : ndarray
        Grid on ``[0, b]``.
    cdf : ndarray
        Conditional distribution function of the absolutely continuous
        part on the grid; it ends at ``1 - atom`` where ``atom`` is the
        conditional probability of ``x = b``.
    p_cross : float
        Probability that the excursion reaches ``level``.
    """
    b = float(level)
    if b <= 0:
        raise ValueError("level must be positive")
    if b > table.x_max:
        raise ValueError("level beyond table range")
    dens, sf = _start_density(start)
    h = table.step
    m = max(int(math.ceil(b / h)), 8)
    x = np.linspace(0.0, b, m + 1)
    dx = x[1] - x[0]
    w = table(x)
    f = dens(x)
    # trapezoidal convolution K(s) = int_0^s f(y) W(s-y) dy on the grid
    K = fftconvolve(f, w)[: m + 1] * dx - 0.5 * dx * (f[0] * w + f * w[0])
    K[0] = 0.0
    wb = w[-1]
    out = jump_sf(x) * (w[::-1] * K[-1] / wb - K[::-1])
    out = np.maximum(out, 0.0)
    mass = np.concatenate([[0.0], np.cumsum(0.5 * (out[1:] + out[:-1]) * dx)])
    atom = float(sf(b))
    total = mass[-1] + atom
    return x, mass / total, float(total)


def sample_excursion_undershoot(level: float, size: int, table: ScaleFunctionTable, rng=None,
                                start: str = START_CROSSING) -> np.ndarray:
    """Draw first undershoots at ``level`` for excursions that reach it."""
    rng = as_generator(rng)
    x, cdf, _ = excursion_undershoot_law(level, table, start)
    u = rng.random(size)
    return np.where(u < cdf[-1], np.interp(u, cdf, x), float(level))


@numba.njit(cache=True)
def _excursion_undershoot_mc(rng, n_accept, level, crossing_start, max_trials):
    out = np.empty(n_accept)
    got = 0
    trials = 0
    while got < n_accept and trials < max_trials:
        trials += 1
        z = _crossing_jump(rng) if crossing_start else _jump(rng)
        if z > level:
            out[got] = level
            got += 1
            continue
        x = z
        while True:
            e = rng.standard_exponential()
            if x - e <= 0.0:
                break
            x -= e
            z = _jump(rng)
            if x + z > level:
                out[got] = level - x
                got += 1
                break
            x += z
    return out[:got], trials


def excursion_undershoot_mc(level: float, size: int, rng=None, start: str = START_CROSSING,
                            max_trials: int = 10**9):
    """Rejection simulation of the excursion undershoot law (oracle)."""
    _start_density(start)
    rng = as_generator(rng)
    return _excursion_undershoot_mc(rng, int(size), float(level), start == START_CROSSING, int(max_trials))
