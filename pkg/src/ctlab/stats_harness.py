"""Statistical verification primitives shared by every module.

Each check returns a :class:`TestReport`. A report passes when its
statistic does not exceed its threshold. Thresholds come from asymptotic
critical values at a fixed level (default ``alpha = 0.01``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

import numpy as np
from scipy import stats

DEFAULT_ALPHA = 0.01


@dataclass
class TestReport:
    """Outcome of one statistical check.

    ``passed`` is true iff ``statistic <= threshold``.
    """

    name: str
    statistic: float
    threshold: float
    n_samples: int
    passed: bool = field(init=False)
    metadata: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self) -> None:
        self.statistic = float(self.statistic)
        self.threshold = float(self.threshold)
        self.n_samples = int(self.n_samples)
        self.passed = bool(self.statistic <= self.threshold)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "pass": self.passed,
            "metadata": _jsonable(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: statistic={self.statistic:.6g} threshold={self.threshold:.6g} n={self.n_samples}"


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_jsonl(reports: Iterable[TestReport], path) -> None:
    """Write reports as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def kolmogorov_critical(alpha: float) -> float:
    """Asymptotic Kolmogorov critical value ``c(alpha)`` (``1.628`` at 0.01)."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


def _clean(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if np.isnan(x).any():
        raise ValueError("samples contain NaN")
    return x


def ks_distance(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``."""
    x = np.sort(_clean(samples))
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_statistic(samples, cdf, alpha: float = DEFAULT_ALPHA, name: str = "ks",
                 threshold: Optional[float] = None, min_samples: int = 30) -> TestReport:
    """One-sample Kolmogorov-Smirnov check.

    The default threshold is ``c(alpha)/sqrt(N)``; pass ``threshold`` to
    impose a fixed tolerance instead.
    """
    x = _clean(samples)
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {x.size}")
    d = ks_distance(x, cdf)
    thr = kolmogorov_critical(alpha) / math.sqrt(x.size) if threshold is None else threshold
    return TestReport(name, d, thr, x.size, {"alpha": alpha})


def two_sample_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance."""
    a = np.sort(_clean(a))
    b = np.sort(_clean(b))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def two_sample_ks(a, b, alpha: float = DEFAULT_ALPHA, name: str = "ks2",
                  threshold: Optional[float] = None) -> TestReport:
    """Two-sample Kolmogorov-Smirnov check."""
    a = _clean(a)
    b = _clean(b)
    d = two_sample_distance(a, b)
    if threshold is None:
        threshold = kolmogorov_critical(alpha) * math.sqrt((a.size + b.size) / (a.size * b.size))
    return TestReport(name, d, threshold, a.size + b.size, {"alpha": alpha, "n_a": a.size, "n_b": b.size})


def merge_cells(counts, expected, min_expected: float = 5.0):
    """Merge cells (in order of increasing expectation) until each has ``>= min_expected``."""
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    order = np.argsort(expected, kind="stable")
    c_out, e_out = [], []
    acc_c = acc_e = 0.0
    for idx in order:
        acc_c += counts[idx]
        acc_e += expected[idx]
        if acc_e >= min_expected:
            c_out.append(acc_c)
            e_out.append(acc_e)
            acc_c = acc_e = 0.0
    if acc_e > 0:
        if e_out:
            c_out[-1] += acc_c
            e_out[-1] += acc_e
        else:
            c_out.append(acc_c)
            e_out.append(acc_e)
    return np.array(c_out), np.array(e_out)


def chi_square_gof(counts, expected, alpha: float = DEFAULT_ALPHA, name: str = "chi2",
                   ddof: int = 0) -> TestReport:
    """Pearson chi-square goodness of fit with automatic cell merging.

    ``expected`` may be probabilities or counts; it is rescaled to the
    observed total.
    """
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if counts.shape != expected.shape:
        raise ValueError("counts and expected must have the same shape")
    total = counts.sum()
    expected = expected * total / expected.sum()
    c, e = merge_cells(counts, expected)
    df = c.size - 1 - ddof
    if df < 1:
        raise ValueError("not enough cells after merging")
    stat = float(np.sum((c - e) ** 2 / e))
    thr = float(stats.chi2.ppf(1.0 - alpha, df))
    return TestReport(name, stat, thr, int(total), {"alpha": alpha, "df": df, "cells": int(c.size)})


def poisson_dispersion(counts, alpha: float = DEFAULT_ALPHA, name: str = "dispersion") -> TestReport:
    """Index-of-dispersion test: ``sum (x - mean)^2 / mean`` against chi-square(N-1).

    The normal approximation gives the two-sided statistic ``|z|``.
    """
    x = _clean(counts)
    n = x.size
    m = x.mean()
    if m <= 0:
        raise ValueError("mean count must be positive")
    d = float(np.sum((x - m) ** 2) / m)
    z = (d - (n - 1)) / math.sqrt(2.0 * (n - 1))
    thr = float(stats.norm.ppf(1.0 - alpha / 2.0))
    return TestReport(name, abs(z), thr, n, {"alpha": alpha, "mean": m, "variance_ratio": float(x.var(ddof=1) / m)})


def mean_within_se(samples, target: float, k: float = 3.0, name: str = "mean") -> TestReport:
    """Check ``|mean - target| <= k * SE``; the statistic is the z-score magnitude."""
    x = _clean(samples)
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    z = abs(m - target) / se if se > 0 else (0.0 if m == target else math.inf)
    return TestReport(name, z, k, x.size, {"mean": m, "se": se, "target": target})


def proportion_within_se(hits: int, n: int, target: float, k: float = 3.0,
                         name: str = "proportion") -> TestReport:
    """Check a Bernoulli frequency against ``target`` using the null standard error."""
    p = hits / n
    se = math.sqrt(target * (1.0 - target) / n)
    z = abs(p - target) / se if se > 0 else (0.0 if p == target else math.inf)
    return TestReport(name, z, k, n, {"frequency": p, "se": se, "target": target})


def correlation_bound(x, y, k: float = 3.0, name: str = "correlation") -> TestReport:
    """Check ``|corr(x, y)| <= k / sqrt(N)``."""
    x = _clean(x)
    y = _clean(y)
    rho = float(np.corrcoef(x, y)[0, 1])
    return TestReport(name, abs(rho), k / math.sqrt(x.size), x.size, {"rho": rho})


def relative_error(observed: float, target: float, tol: float, name: str = "relative") -> TestReport:
    """Check ``|observed/target - 1| <= tol``."""
    err = abs(observed / target - 1.0)
    return TestReport(name, err, tol, 1, {"observed": observed, "target": target})


def absolute_error(observed: float, target: float, tol: float, name: str = "absolute") -> TestReport:
    """Check ``|observed - target| <= tol``."""
    return TestReport(name, abs(observed - target), tol, 1, {"observed": observed, "target": target})
