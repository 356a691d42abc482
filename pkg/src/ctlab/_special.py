"""Special functions evaluated by self-contained routines.

The upper incomplete gamma function uses the power series below ``x = 1``
and a modified-Lentz continued fraction above it. Results are checked in
the test-suite against :func:`scipy.special.gammaincc` and
:func:`scipy.special.erfc`.
"""
from __future__ import annotations

import math

import numpy as np

_TINY = 1e-300
_EPS = 1e-16
_MAX_ITER = 10_000


def _lower_series_scaled(s: float, x: float) -> float:
    # x^s * sum_k x^k / (s (s+1) ... (s+k)); equals e^x * gamma_lower(s, x)
    term = 1.0 / s
    total = term
    k = 0
    while True:
        k += 1
        term *= x / (s + k)
        total += term
        if abs(term) < abs(total) * _EPS or k > _MAX_ITER:
            break
    return total * x**s


def _upper_cf_scaled(s: float, x: float) -> float:
    # e^x Gamma(s, x) = x^s / (x+1-s - 1(1-s)/(x+3-s - 2(2-s)/(x+5-s - ...)))
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b if b != 0 else 1.0 / _TINY
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * x**s


def upper_gamma_scaled(s: float, x: float) -> float:
    """Return ``exp(x) * Gamma(s, x)`` for ``s > 0`` and ``x >= 0``.

    The scaling keeps the value finite for large ``x``.
    """
    if x < 0 or s <= 0:
        raise ValueError("requires s > 0 and x >= 0")
    if x == 0:
        return math.gamma(s)
    if x < 1.0:
        return math.exp(x) * math.gamma(s) - _lower_series_scaled(s, x)
    return _upper_cf_scaled(s, x)


def upper_gamma(s: float, x: float) -> float:
    """Upper incomplete gamma ``Gamma(s, x) = int_x^inf t^(s-1) e^(-t) dt``."""
    return upper_gamma_scaled(s, x) * math.exp(-x)


def laguerre(n, alpha: float, x):
    """Generalized Laguerre polynomial ``L_n^(alpha)(x)`` by the three-term recurrence.

    Parameters
    ----------
    n : int or array_like of int
        Degrees (nonnegative). A degree of ``-1`` returns 0.
    alpha : float
    x : float

    Returns
    -------
    ndarray or float
    """
    n_arr = np.asarray(n, dtype=np.int64)
    top = int(n_arr.max(initial=0))
    table = np.empty(top + 2)
    table[0] = 0.0  # degree -1
    table[1] = 1.0
    if top >= 1:
        table[2] = 1.0 + alpha - x
    for k in range(1, top):
        table[k + 2] = ((2 * k + 1 + alpha - x) * table[k + 1] - (k + alpha) * table[k]) / (k + 1)
    if np.any(n_arr < -1):
        raise ValueError("degree must be >= -1")
    out = table[n_arr + 1]
    return float(out) if np.ndim(n) == 0 else out
