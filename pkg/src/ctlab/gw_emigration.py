r"""Binary Galton-Watson process with emigration, GW(-1).

At population :math:`x > 0` the process jumps after an
:math:`\mathrm{Exp}(4x+1)` holding time, up by one with probability
:math:`2x/(4x+1)` and down by one otherwise. Zero is absorbing.

The module pairs an exact event-driven simulator with the closed forms for
the extinction time :math:`\sigma_0` started from one individual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.special import gammaln

from ._rng import as_generator
from ._special import laguerre, upper_gamma_scaled

SQRT2 = math.sqrt(2.0)


@dataclass
class GWPath:
    """One GW(-1) trajectory.

    ``populations[i]`` is the population on ``[event_times[i], event_times[i+1])``;
    ``event_times[0] = 0`` holds the start value.
    """

    event_times: np.ndarray
    populations: np.ndarray
    extinction_time: Optional[float] = None
    horizon: Optional[float] = None

    def value_at(self, t: float) -> int:
        idx = int(np.searchsorted(self.event_times, t, side="right")) - 1
        return int(self.populations[max(idx, 0)])


def simulate_gw(start: int, horizon: Optional[float] = None, rng=None) -> GWPath:
    """Simulate one path until extinction or ``horizon``.

    Parameters
    ----------
    start : int
        Initial population (0 gives the absorbed path).
    horizon : float, optional
        Stop time. ``None`` runs until extinction.
    rng : numpy Generator or seed
    """
    if start < 0:
        raise ValueError("start must be >= 0")
    rng = as_generator(rng)
    times = [0.0]
    pops = [int(start)]
    if start == 0:
        return GWPath(np.array(times), np.array(pops), 0.0, horizon)
    t = 0.0
    x = int(start)
    limit = math.inf if horizon is None else float(horizon)
    while x > 0:
        rate = 4.0 * x + 1.0
        t += rng.exponential(1.0 / rate)
        if t > limit:
            break
        x += 1 if rng.random() * rate < 2.0 * x else -1
        times.append(t)
        pops.append(x)
    ext = t if x == 0 else None
    return GWPath(np.array(times), np.array(pops, dtype=np.int64), ext, horizon)


@numba.njit(cache=True)
def _gw_batch(rng, n_paths, start, obs_times, horizon):
    n_obs = obs_times.size
    sigma = np.full(n_paths, np.inf)
    z_obs = np.zeros((n_paths, n_obs), dtype=np.int64)
    for p in range(n_paths):
        t = 0.0
        x = start
        j = 0
        while x > 0:
            rate = 4.0 * x + 1.0
            t_next = t + rng.standard_exponential() / rate
            while j < n_obs and obs_times[j] < t_next:
                z_obs[p, j] = x
                j += 1
            if t_next > horizon:
                break
            t = t_next
            if rng.random() * rate < 2.0 * x:
                x += 1
            else:
                x -= 1
        if x == 0:
            sigma[p] = t
    return sigma, z_obs


def sample_gw(n_paths: int, rng=None, start: int = 1, obs_times: Sequence[float] = (),
              horizon: Optional[float] = None):
    """Batch simulation returning extinction times and populations at ``obs_times``.

    Returns
    -------
    sigma : ndarray
        Extinction times, ``inf`` for paths alive at ``horizon``.
    z : ndarray, shape (n_paths, len(obs_times))
        Populations at the observation times (0 after extinction).
    """
    rng = as_generator(rng)
    obs = np.sort(np.asarray(obs_times, dtype=float))
    hz = np.inf if horizon is None else float(horizon)
    if obs.size and hz < obs[-1]:
        raise ValueError("horizon must cover the observation times")
    return _gw_batch(rng, int(n_paths), int(start), obs, hz)


def survival_sf(u):
    """Survival function of the extinction time, ``(1 + 2u)^(-3/2)``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    out = (1.0 + 2.0 * u) ** -1.5
    return float(out) if out.ndim == 0 else out


def extinction_cdf(u):
    """Distribution function ``L(u) = 1 - (1 + 2u)^(-3/2)`` (zero for ``u < 0``)."""
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    out = 1.0 - (1.0 + 2.0 * u) ** -1.5
    return float(out) if out.ndim == 0 else out


def extinction_density_2sigma(s):
    """Density of twice the extinction time, ``(3/2)(1 + s)^(-5/2)``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("s must be nonnegative")
    out = 1.5 * (1.0 + s) ** -2.5
    return float(out) if out.ndim == 0 else out


def _phi_scalar(theta: float) -> float:
    if theta == 0.0:
        return 0.0
    return theta**1.5 * upper_gamma_scaled(0.5, theta / 2.0) / SQRT2


def laplace_psi(theta):
    r"""Laplace transform :math:`E e^{-\theta\sigma_0}` in closed form.

    ``1 - theta + theta^(3/2) e^(theta/2) Gamma(1/2, theta/2) / sqrt(2)``.
    """
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0):
        raise ValueError("theta must be nonnegative")
    out = np.vectorize(lambda t: 1.0 - t + _phi_scalar(t), otypes=[float])(th)
    return float(out) if out.ndim == 0 else out


class ContinuedFractionWarning(RuntimeWarning):
    pass


def laplace_psi_continued_fraction(theta: float, depth: int = 200, check: bool = True) -> float:
    """Evaluate the Laplace transform through its continued fraction.

    Uses the backward recurrence
    ``F_r = (r + 3/2) / ((2r + 5/2 + theta/2) - (r + 1) F_{r+1})``
    truncated with ``F_depth = 0``; ``depth = 1`` returns the first
    convergent ``(3/2)/(theta/2 + 5/2)``.

    Raises
    ------
    ArithmeticError
        If ``check`` and depth >= 200 and two successive depths differ by
        more than ``1e-10``.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    if depth < 1:
        raise ValueError("depth must be >= 1")

    def run(d: int) -> float:
        f = 0.0
        for r in range(d - 1, -1, -1):
            f = (r + 1.5) / ((2 * r + 2.5 + theta / 2.0) - (r + 1) * f)
        return f

    value = run(depth)
    if check and depth >= 200 and abs(value - run(depth - 1)) > 1e-10:
        raise ArithmeticError(f"continued fraction not converged at depth {depth}")
    return value


def conditional_mean(t):
    """Mean population given survival to ``t``: ``1 + 2t``."""
    t = np.asarray(t, dtype=float)
    out = 1.0 + 2.0 * t
    return float(out) if out.ndim == 0 else out


def mean_stopped_time(t):
    """``E[t ^ sigma_0] = 1 - (1 + 2t)^(-1/2)``."""
    t = np.asarray(t, dtype=float)
    out = 1.0 - (1.0 + 2.0 * t) ** -0.5
    return float(out) if out.ndim == 0 else out


def scale_martingale_value(z):
    """Scale function of the chain, ``Gamma(z + 3/2) / (Gamma(z) Gamma(5/2))`` (0 at z = 0)."""
    z_arr = np.asarray(z, dtype=np.int64)
    zf = z_arr.astype(float)
    safe = np.where(z_arr > 0, zf, 1.0)
    val = np.exp(gammaln(safe + 1.5) - gammaln(safe) - gammaln(2.5))
    out = np.where(z_arr > 0, val, 0.0)
    return float(out) if out.ndim == 0 else out


def laguerre_martingale_value(x: float, z, t: float):
    """``exp(2 x t) L^(3/2)_{z-1}(x)``, zero when ``z = 0``."""
    z_arr = np.asarray(z, dtype=np.int64)
    poly = laguerre(z_arr - 1, 1.5, x)
    out = math.exp(2.0 * x * t) * np.asarray(poly, dtype=float)
    return float(out) if out.ndim == 0 else out


def generator_apply(f, z: np.ndarray) -> np.ndarray:
    """Apply the GW(-1) generator to ``f`` at states ``z >= 1``."""
    z = np.asarray(z, dtype=np.int64)
    return 2 * z * (f(z + 1) - f(z)) + (2 * z + 1) * (f(z - 1) - f(z))


# ---------------------------------------------------------------- Yaglom


def transition_pmf(start: int, t: float, kmax: int, rtol: float = 1e-9, atol: float = 1e-14) -> np.ndarray:
    """Law of ``Z_t`` given ``Z_0 = start`` on ``{0, ..., kmax}``.

    Solves the forward equation of the chain truncated at ``kmax`` with
    an implicit (BDF) integrator; mass leaking past ``kmax`` is dropped,
    so ``1 - sum`` bounds the truncation error.
    """
    k = np.arange(kmax + 1, dtype=float)
    up = 2.0 * k
    down = 2.0 * k + 1.0
    up[0] = down[0] = 0.0
    # dp_j/dt = up_{j-1} p_{j-1} + down_{j+1} p_{j+1} - (up_j + down_j) p_j
    diag = -(up + down)
    lower = up[:-1]  # from j-1 into j
    upper = down[1:]  # from j+1 into j
    q = sparse.diags([lower, diag, upper], [-1, 0, 1], format="csc")
    p0 = np.zeros(kmax + 1)
    p0[start] = 1.0
    sol = solve_ivp(lambda _t, p: q @ p, (0.0, t), p0, method="BDF", jac=q,
                    rtol=rtol, atol=atol, t_eval=[t])
    p = np.clip(sol.y[:, -1], 0.0, None)
    return p


def yaglom_law(n: float, t: float, kmax: Optional[int] = None) -> np.ndarray:
    """Conditional law of ``Z_{nt}`` given survival, from one individual.

    Returns the probability vector on ``{1, ..., kmax}`` (index 0 unused).
    """
    horizon = n * t
    if kmax is None:
        kmax = int(max(200, 22 * (1 + 2 * horizon)))
    p = transition_pmf(1, horizon, kmax)
    p[0] = 0.0
    return p / p.sum()


@numba.njit(cache=True)
def _surviving_populations(rng, n_accept, horizon, max_trials):
    out = np.zeros(n_accept, dtype=np.int64)
    got = 0
    trials = 0
    while got < n_accept and trials < max_trials:
        trials += 1
        t = 0.0
        x = 1
        while x > 0:
            rate = 4.0 * x + 1.0
            t += rng.standard_exponential() / rate
            if t > horizon:
                break
            if rng.random() * rate < 2.0 * x:
                x += 1
            else:
                x -= 1
        if x > 0:
            out[got] = x
            got += 1
    return out[:got], trials


REJECTION_LIMIT = 20.0


def yaglom_sample(n: float, t: float, size: int, rng=None, method: str = "auto") -> np.ndarray:
    """Samples of ``Z_{nt} / (2nt)`` conditioned on survival to ``nt``.

    Parameters
    ----------
    method : {"auto", "rejection", "exact"}
        ``rejection`` simulates paths and keeps survivors. ``exact`` draws
        from the forward-equation law, which stays cheap when survival is
        rare. ``auto`` uses rejection for ``nt <= 20``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if t <= 0:
        raise ValueError("t must be positive")
    horizon = n * t
    if horizon > 500:
        raise ValueError("n*t > 500: conditioning is infeasible")
    rng = as_generator(rng)
    if method == "auto":
        method = "rejection" if horizon <= REJECTION_LIMIT else "exact"
    if method == "rejection":
        p_surv = (1 + 2 * horizon) ** -1.5
        max_trials = int(50 * size / p_surv) + 1000
        z, _ = _surviving_populations(rng, int(size), float(horizon), max_trials)
        if z.size < size:
            raise RuntimeError("rejection sampler exhausted its trial budget")
    elif method == "exact":
        p = yaglom_law(n, t)
        cdf = np.cumsum(p)
        z = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
    else:
        raise ValueError(f"unknown method {method!r}")
    return z / (2.0 * horizon)
