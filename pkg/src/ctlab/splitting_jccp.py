r"""Splitting trees, their jumping contour process, age processes and streets.

A splitting tree with lifespan law ``L`` is explored depth-first; the
resulting contour is the compound Poisson process of
:mod:`ctlab.levy_fluctuation` run until it returns to 0. Upcrossings of a
level ``na`` mark the subtrees alive at that height; the undershoot of each
crossing jump is the age of the corresponding individual.

The reduced contour interleaves two independent excursions. A street at a
level records the ages of all crossings, the first one (in time order)
being the clock.

All simulations are exact and event driven. Several kernels move a path
that sits above the highest level of interest down to that level at once.
A spectrally positive path always returns to a lower level continuously, so
crossings at or below the cap keep their exact law.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from ._rng import as_generator
from .levy_fluctuation import (
    START_CROSSING,
    CompoundPoissonPath,
    STOP_EXIT,
    _crossing_jump,
    _jump,
    conditional_undershoot_cdf,
    crossing_jump_quantile,
    crossing_jump_sf,
    excursion_undershoot_law,
    jump_sf,
    ladder_height_quantile,
    limit_rate_gstar,
    sample_jumps,
    scale_function,
)

ROOT_LABEL: tuple = ()


# ------------------------------------------------------------------ chronological trees


@dataclass
class ChronologicalTree:
    """Individuals keyed by Ulam-Harris labels with birth and death levels.

    The ancestor has label ``()``; the ``k``-th child (by increasing birth
    level) of ``u`` has label ``u + (k,)``.
    """

    birth: dict
    death: dict
    truncated: bool = False

    def __post_init__(self) -> None:
        if ROOT_LABEL not in self.birth:
            raise ValueError("root missing")

    @property
    def n_individuals(self) -> int:
        return len(self.birth)

    def lifespan(self, u: tuple) -> float:
        return self.death[u] - self.birth[u]

    @property
    def total_length(self) -> float:
        return float(sum(self.death[u] - self.birth[u] for u in self.birth))

    def children(self, u: tuple) -> list[tuple]:
        out = []
        k = 1
        while u + (k,) in self.birth:
            out.append(u + (k,))
            k += 1
        return out

    def validate(self) -> None:
        """Raise ``AssertionError`` on a broken invariant."""
        for u in self.birth:
            assert self.birth[u] < self.death[u], f"empty life at {u}"
            if u != ROOT_LABEL:
                p = u[:-1]
                assert p in self.birth, f"orphan {u}"
                assert self.birth[p] < self.birth[u] < self.death[p], f"birth outside parent life at {u}"
            kids = self.children(u)
            b = [self.birth[c] for c in kids]
            assert all(x < y for x, y in zip(b, b[1:])), f"children of {u} not ordered"

    def isclose(self, other: "ChronologicalTree", tol: float = 1e-9) -> bool:
        if set(self.birth) != set(other.birth):
            return False
        return all(abs(self.birth[u] - other.birth[u]) <= tol and abs(self.death[u] - other.death[u]) <= tol
                   for u in self.birth)


def sample_splitting_tree(chi: float, rng=None, max_individuals: int = 100_000) -> ChronologicalTree:
    """Splitting tree whose ancestor lives on ``(0, chi)``.

    Each individual living on ``(alpha, omega)`` has children at the points
    of a unit-rate Poisson process on that interval; lifespans are drawn
    from the jump law. Construction stops after ``max_individuals`` and
    sets ``truncated``.
    """
    if chi <= 0:
        raise ValueError("chi must be positive")
    rng = as_generator(rng)
    birth = {ROOT_LABEL: 0.0}
    death = {ROOT_LABEL: float(chi)}
    queue = [ROOT_LABEL]
    truncated = False
    head = 0
    while head < len(queue):
        u = queue[head]
        head += 1
        a, w = birth[u], death[u]
        k = rng.poisson(w - a)
        if k == 0:
            continue
        if len(birth) + k > max_individuals:
            truncated = True
            break
        times = np.sort(rng.uniform(a, w, size=k))
        lives = sample_jumps(k, rng)
        for i in range(k):
            c = u + (i + 1,)
            birth[c] = float(times[i])
            death[c] = float(times[i] + lives[i])
            queue.append(c)
    return ChronologicalTree(birth, death, truncated)


def jccp_from_tree(tree: ChronologicalTree) -> CompoundPoissonPath:
    """Jumping contour of a finite tree.

    The contour starts at 0 with a jump to the ancestor's death level and
    drifts down at unit speed. On reaching the birth level of a child it
    jumps by the child's lifespan and explores that child before continuing
    down the parent. Children are therefore visited by decreasing birth
    level. The total duration equals the total length of the tree.
    """
    if tree.truncated:
        raise ValueError("tree was truncated")
    times, sizes = [0.0], [tree.lifespan(ROOT_LABEL)]
    t = 0.0
    level = tree.death[ROOT_LABEL]
    stack = [(ROOT_LABEL, tree.children(ROOT_LABEL)[::-1], 0)]
    while stack:
        u, kids, i = stack[-1]
        if i < len(kids):
            c = kids[i]
            stack[-1] = (u, kids, i + 1)
            t += level - tree.birth[c]
            times.append(t)
            sizes.append(tree.lifespan(c))
            level = tree.death[c]
            stack.append((c, tree.children(c)[::-1], 0))
        else:
            t += level - tree.birth[u]
            level = tree.birth[u]
            stack.pop()
    return CompoundPoissonPath(np.array(times), np.array(sizes), 0.0, t, STOP_EXIT, level=None, side="bottom")


def tree_from_jccp(path: CompoundPoissonPath, tol: float = 1e-9) -> ChronologicalTree:
    """Rebuild the tree from its contour; each jump becomes one individual.

    Raises
    ------
    ValueError
        If the path does not start with a jump from 0, visits 0 before its
        end, or does not end at 0.
    """
    times = np.asarray(path.jump_times, dtype=float)
    if times.size == 0 or abs(times[0]) > tol or abs(path.start) > tol:
        raise ValueError("path must start at 0 with a jump at time 0")
    pre = path.pre_jump_values()
    post = pre + path.jump_sizes
    if np.any(pre[1:] <= tol):
        raise ValueError("path returns to 0 before its end")
    if abs(path.end_value) > 1e-7 * max(1.0, path.end_time):
        raise ValueError("path does not end at 0")
    parent = [-1]
    kids: list[list[int]] = [[]]
    stack = [0]
    for j in range(1, times.size):
        x = pre[j]
        while pre[stack[-1]] >= x:
            stack.pop()
            if not stack:
                raise ValueError("malformed path")
        p = stack[-1]
        if not x < post[p]:
            raise ValueError("malformed path")
        parent.append(p)
        kids.append([])
        kids[p].append(j)
        stack.append(j)
    birth, death = {}, {}
    labels = {0: ROOT_LABEL}
    order = [0]
    for j in order:
        lab = labels[j]
        birth[lab] = float(pre[j])
        death[lab] = float(post[j])
        for k, c in enumerate(sorted(kids[j], key=lambda c: pre[c]), start=1):
            labels[c] = lab + (k,)
            order.append(c)
    return ChronologicalTree(birth, death)


# ------------------------------------------------------------------ age processes


@dataclass
class AgeProcess:
    """Undershoots ``J`` at successive upcrossings of level ``na`` (``k = 1, 2, ...`` in time order)."""

    level: float
    n: float
    k: np.ndarray
    J: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return self.k / math.sqrt(2.0 * self.n)

    @property
    def ages(self) -> np.ndarray:
        return self.J / self.n

    def count_in_box(self, pos_max: float, age_min: float, age_max: float = math.inf) -> int:
        p, a = self.positions, self.ages
        return int(np.sum((p <= pos_max) & (a >= age_min) & (a < age_max)))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("k,J\n")
            for k, j in zip(self.k, self.J):
                fh.write(f"{int(k)},{j:.17g}\n")


def age_process_at_level(path: CompoundPoissonPath, a: float, n: float) -> AgeProcess:
    """Undershoots of the upcrossings of level ``na`` by ``path``."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    sigma = n * a
    pre = path.pre_jump_values()
    post = pre + path.jump_sizes
    hit = (pre <= sigma) & (post > sigma)
    J = sigma - pre[hit]
    return AgeProcess(float(a), float(n), np.arange(1, J.size + 1), J)


@numba.njit(cache=True)
def _first_crossings(rng, start, level, k_max, max_jumps):
    out = np.empty(k_max)
    x = start
    got = 0
    jumps = 0
    while got < k_max and jumps < max_jumps:
        if x > level:
            x = level  # the path creeps back down to the level
        x -= rng.standard_exponential()
        z = _jump(rng)
        jumps += 1
        if x + z > level:
            out[got] = level - x
            got += 1
        x += z
    return out[:got]


def first_crossing_undershoots(level: float, k_max: int, rng=None, start: float = 0.0,
                               max_jumps: int = 10**10, method: str = "renewal") -> np.ndarray:
    """Undershoots of the first ``k_max`` upcrossings of ``level`` by the free process.

    This is the contour of the infinite forest seen from ``start``.

    Parameters
    ----------
    method : {"renewal", "walk"}
        ``"walk"`` simulates every jump. ``"renewal"`` simulates only up to
        the first upcrossing: the path then creeps back down to the level, so
        the later undershoots are i.i.d. ladder heights, drawn by inversion.
        The walk has heavy-tailed cost (returns to the level take
        ``~ m^2`` jumps for ``m`` crossings), which the renewal form avoids.
    """
    rng = as_generator(rng)
    if method == "walk":
        out = _first_crossings(rng, float(start), float(level), int(k_max), int(max_jumps))
        if out.size < k_max:
            raise RuntimeError("jump budget exhausted")
        return out
    if method != "renewal":
        raise ValueError(method)
    if k_max <= 0:
        return np.empty(0)
    if start == level:
        first = np.empty(0)
    else:
        first = _first_crossings(rng, float(start), float(level), 1, int(max_jumps))
        if first.size < 1:
            raise RuntimeError("jump budget exhausted")
    rest = ladder_height_quantile(rng.random(k_max - first.size))
    return np.concatenate([first, np.atleast_1d(rest)])


def infinite_forest_age_process(a: float, n: float, k_max: int, rng=None, start: float = 0.0) -> AgeProcess:
    """Age process at level ``na`` of the infinite forest, first ``k_max`` atoms."""
    J = first_crossing_undershoots(n * a, k_max, rng, start)
    return AgeProcess(float(a), float(n), np.arange(1, J.size + 1), J)


@dataclass
class RestrictionReport:
    checked: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_restriction_consistency(ages0: AgeProcess, ages1: AgeProcess, tol: float = 1e-9) -> RestrictionReport:
    """Every atom at the higher level with age ``>= a1 - a0`` must appear at the lower level aged ``a1 - a0`` less."""
    if ages0.n != ages1.n:
        raise ValueError("age processes must share the scale n")
    if ages0.level > ages1.level:
        raise ValueError("requires a0 <= a1")
    d = ages1.level - ages0.level
    lower = np.sort(ages0.ages)
    report = RestrictionReport(0)
    for age in ages1.ages:
        if age < d - tol:
            continue
        report.checked += 1
        target = age - d
        i = np.searchsorted(lower, target)
        near = [lower[j] for j in (i - 1, i) if 0 <= j < lower.size]
        if not near or min(abs(v - target) for v in near) > tol:
            report.violations.append(float(age))
    return report


# ------------------------------------------------------------------ streets


@dataclass
class Street:
    """Ages along a spine at one level.

    ``positions``/``ages`` form the point process ``nu``; ``I`` is the
    spine length and ``R`` the clock age (``None`` when there is no
    crossing at all). ``n`` is the scale for finite-n streets and ``None``
    for limit samples. ``min_age`` is the smallest age the sample resolves.
    """

    level: float
    positions: np.ndarray
    ages: np.ndarray
    I: float
    R: Optional[float]
    n: Optional[float] = None
    min_age: float = 0.0

    @property
    def is_empty(self) -> bool:
        return self.I == 0 and self.positions.size == 0

    @property
    def n_atoms(self) -> int:
        return int(self.positions.size)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "I": self.I,
            "R": self.R,
            "atoms": [[float(p), float(a)] for p, a in zip(self.positions, self.ages)],
            "n": self.n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def street_from_jumps(pre: np.ndarray, post: np.ndarray, a: float, n: float) -> Street:
    """Street at level ``a`` from jumps in time order.

    The first crossing of ``na`` is the clock; the others become atoms at
    positions ``k / sqrt(2n)`` with ``k = 1`` for the last crossing.
    """
    sigma = n * a
    hit = (pre <= sigma) & (post > sigma)
    J = sigma - pre[hit]
    s = math.sqrt(2.0 * n)
    if J.size == 0:
        return Street(float(a), np.empty(0), np.empty(0), 0.0, None, float(n))
    rest = J[1:][::-1]
    return Street(float(a), np.arange(1, rest.size + 1) / s, rest / n, rest.size / s, float(J[0] / n), float(n))


# ------------------------------------------------------------------ compiled path pieces


@numba.njit(cache=True)
def _push(buf, m, pre, post, src, rec):
    if m >= buf.shape[0]:
        new = np.empty((2 * buf.shape[0] + 16, 4))
        new[:m] = buf[:m]
        buf = new
    buf[m, 0] = pre
    buf[m, 1] = post
    buf[m, 2] = src
    buf[m, 3] = rec
    return buf


@numba.njit(cache=True)
def _continue(rng, buf, m, p, H, active, cap, floor, max_jumps):
    """Run the single-path form from position ``p`` with record threshold ``H``.

    A jump landing above ``H`` switches provenance, moves the position to
    ``H`` and raises ``H``. Stops when the drift reaches ``floor``.
    """
    status = 0
    count = 0
    while True:
        e = rng.standard_exponential()
        if p - e <= floor:
            break
        p -= e
        z = _jump(rng)
        T = p + z
        rec = T > H
        buf = _push(buf, m, p, T, active, 1.0 if rec else 0.0)
        m += 1
        if rec:
            p = H
            H = T
            active = 1 - active
        else:
            p = T
        if p > cap:
            p = cap
        count += 1
        if count >= max_jumps:
            status = 1
            break
    return buf, m, p, H, active, status


@numba.njit(cache=True)
def _excursion(rng, v, max_jumps):
    """Full excursion from a jump ``0 -> v`` until the drift reaches 0."""
    buf = np.empty((64, 4))
    buf = _push(buf, 0, 0.0, v, 0, 0.0)
    m = 1
    p = v
    status = 0
    while True:
        e = rng.standard_exponential()
        if p - e <= 0.0:
            break
        p -= e
        z = _jump(rng)
        buf = _push(buf, m, p, p + z, 0, 0.0)
        m += 1
        p += z
        if m >= max_jumps:
            status = 1
            break
    return buf[:m].copy(), status


@numba.njit(cache=True)
def _excursion_to_passage(rng, b, max_trials):
    """Excursion with a size-biased first jump, conditioned to pass ``b``; kept up to the passing jump."""
    buf = np.empty((64, 4))
    trials = 0
    while trials < max_trials:
        trials += 1
        v = _crossing_jump(rng)
        buf = _push(buf, 0, 0.0, v, 0, 0.0)
        m = 1
        if v > b:
            return buf[:m].copy(), trials
        p = v
        while True:
            e = rng.standard_exponential()
            if p - e <= 0.0:
                break
            p -= e
            z = _jump(rng)
            buf = _push(buf, m, p, p + z, 0, 0.0)
            m += 1
            if p + z > b:
                return buf[:m].copy(), trials
            p += z
    return buf[:0].copy(), trials


@numba.njit(cache=True)
def _interleave(A, B, alpha0, alpha1, stop_after_passages, b):
    """Interleave two source excursions by alternating record exceedance.

    Returns the combined jumps, the state (position, threshold, active)
    and the source that ran out first (``-1`` if stopped after both
    passages of ``b``).
    """
    buf = np.empty((A.shape[0] + B.shape[0] + 2, 4))
    v0 = A[0, 1]
    v1 = B[0, 1]
    buf[0, 0] = -alpha0
    buf[0, 1] = v0
    buf[0, 2] = 0
    buf[0, 3] = 0
    buf[1, 0] = -alpha1
    buf[1, 1] = v1
    buf[1, 2] = 1
    buf[1, 3] = 0
    m = 2
    rec = np.array([v0, v1])
    idx = np.array([1, 1])
    sizes = np.array([A.shape[0], B.shape[0]])
    passed = np.array([v0 > b, v1 > b])
    active = 1 if v1 <= v0 else 0
    if v1 > v0:
        buf[1, 3] = 1
    p = rec[active]
    terminal = -1
    while True:
        if stop_after_passages and passed[0] and passed[1]:
            break
        a = active
        if idx[a] >= sizes[a]:
            terminal = a
            break
        j = idx[a]
        if a == 0:
            pre = A[j, 0]
            post = A[j, 1]
        else:
            pre = B[j, 0]
            post = B[j, 1]
        idx[a] += 1
        is_rec = post > rec[1 - a]
        buf[m, 0] = pre
        buf[m, 1] = post
        buf[m, 2] = a
        buf[m, 3] = 1.0 if is_rec else 0.0
        m += 1
        if post > b:
            passed[a] = True
        if post > rec[a]:
            rec[a] = post
        if is_rec:
            active = 1 - a
            p = rec[active]
        else:
            p = post
    H = rec[1 - active]
    return buf[:m].copy(), p, H, active, terminal


# ------------------------------------------------------------------ reduced contour


@dataclass
class ReducedJCCP:
    """Two source excursions interleaved into one path.

    ``pre``/``post`` are the levels around each jump in time order and
    ``src`` the source (0 or 1) of each jump; ``record`` flags jumps that
    exceeded the other source's record and so handed over control. The two
    initial jumps come first, with pre-levels ``-alpha0`` and ``-alpha1`` so
    that undershoots include the initial ages. ``terminal`` is the source
    that reached 0 (``-1`` if unknown). When ``cap`` is finite the path was
    moved down to ``cap`` whenever it sat above it; crossings of levels up
    to ``cap`` are exact but provenance above ``cap`` is not tracked.
    """

    v0: float
    v1: float
    pre: np.ndarray
    post: np.ndarray
    src: np.ndarray
    record: np.ndarray
    terminal: int
    alpha0: float = 0.0
    alpha1: float = 0.0
    cap: float = math.inf

    @property
    def fragments(self) -> list[tuple[int, int, int]]:
        """Maximal runs ``(source, first_index, stop_index)`` of jumps from one source after the initial pair."""
        out = []
        i = 2
        while i < self.src.size:
            j = i
            while j + 1 < self.src.size and self.src[j + 1] == self.src[i]:
                j += 1
            out.append((int(self.src[i]), i, j + 1))
            i = j + 1
        return out

    def record_levels(self) -> np.ndarray:
        """Successive handover levels of the interleaving."""
        return self.post[self.record.astype(bool)]

    def street(self, a: float, n: float) -> Street:
        if n * a > self.cap * (1 + 1e-12):
            raise ValueError("level above the cap used for simulation")
        return street_from_jumps(self.pre, self.post, a, n)


def _source_excursion(v: float, rng, max_jumps: int) -> np.ndarray:
    buf, status = _excursion(rng, float(v), int(max_jumps))
    if status:
        raise RuntimeError("jump budget exhausted")
    return buf


def reduced_jccp(v0: float, v1: float, rng=None, alpha0: float = 0.0, alpha1: float = 0.0,
                 max_jumps: int = 50_000_000) -> ReducedJCCP:
    """Interleave two independent excursions started by jumps ``v0`` and ``v1``.

    The 1-source runs first against the 0-source's current record; each
    source runs until it jumps above the other's record, then control
    passes over. Both stop as soon as the running source reaches 0.
    """
    if v0 <= 0 or v1 <= 0:
        raise ValueError("initial jumps must be positive")
    rng = as_generator(rng)
    A = _source_excursion(v0, rng, max_jumps)
    B = _source_excursion(v1, rng, max_jumps)
    buf, _, _, _, terminal = _interleave(A, B, float(alpha0), float(alpha1), False, math.inf)
    return ReducedJCCP(float(v0), float(v1), buf[:, 0], buf[:, 1], buf[:, 2].astype(np.int8),
                       buf[:, 3].astype(bool), int(terminal), float(alpha0), float(alpha1))


def source_excursions(v0: float, v1: float, rng=None, max_jumps: int = 50_000_000):
    """The two uninterleaved source excursions (for marginal checks)."""
    rng = as_generator(rng)
    return _source_excursion(v0, rng, max_jumps), _source_excursion(v1, rng, max_jumps)


def sample_nonempty_reduced(a: float, n: float, rng=None, max_trials: int = 10**9,
                            max_jumps: int = 100_000_000) -> ReducedJCCP:
    """Reduced contour from iid size-biased initial jumps, conditioned on a non-empty street at ``na``.

    A street is non-empty when it has at least one crossing besides the
    clock, which happens exactly when both source excursions pass ``na``.
    Each source is drawn by rejection up to its passing jump, the two are
    interleaved, and the remaining path is run with fresh increments
    (strong Markov property) with the cap at ``na``.
    """
    b = float(n * a)
    if b <= 0:
        raise ValueError("level must be positive")
    rng = as_generator(rng)
    A, t0 = _excursion_to_passage(rng, b, int(max_trials))
    B, t1 = _excursion_to_passage(rng, b, int(max_trials))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise RuntimeError("rejection budget exhausted")
    buf, p, H, active, _ = _interleave(A, B, 0.0, 0.0, True, b)
    m = buf.shape[0]
    out, m, p, H, active, status = _continue(rng, buf, m, min(p, b), H, active, b, 0.0, int(max_jumps))
    if status:
        raise RuntimeError("jump budget exhausted")
    out = out[:m]
    terminal = int(active)
    return ReducedJCCP(float(A[0, 1]), float(B[0, 1]), out[:, 0], out[:, 1], out[:, 2].astype(np.int8),
                       out[:, 3].astype(bool), terminal, cap=b)


def sample_nonempty_streets(a: float, n: float, size: int, rng=None) -> list[Street]:
    rng = as_generator(rng)
    return [sample_nonempty_reduced(a, n, rng).street(a, n) for _ in range(size)]


# ------------------------------------------------------------------ initial jumps and rates


def initial_jump_sampler(rng=None, size: Optional[int] = None):
    """iid pair ``(V0, V1)`` with survival function ``x Lbar(x) + Gbar(x)``.

    Returns a tuple of floats, or two arrays when ``size`` is given.
    """
    rng = as_generator(rng)
    u = rng.random((2,) if size is None else (2, size))
    v = crossing_jump_quantile(u)
    return (float(v[0]), float(v[1])) if size is None else (v[0], v[1])


def initial_jump_pair_rate(n: float) -> float:
    """``n P(V0 > n, V1 > n)`` from the exact tail; tends to ``9/8``."""
    return float(n * crossing_jump_sf(n) ** 2)


def reach_probability(b: float, table=None) -> float:
    """Probability that an excursion with a size-biased first jump passes ``b``."""
    table = table if table is not None else scale_function(_table_range(b))
    return excursion_undershoot_law(b, table, START_CROSSING)[2]


def _table_range(x: float) -> float:
    # powers of two keep the cached tables few
    return float(2.0 ** math.ceil(math.log2(max(16.0, 1.02 * x + 1.0))))


@numba.njit(cache=True)
def _reach_pairs(rng, replicas, b):
    both = 0
    single = 0
    for r in range(replicas):
        ok = 0
        for i in range(2):
            x = _crossing_jump(rng)
            if x > b:
                ok += 1
                continue
            while True:
                e = rng.standard_exponential()
                if x - e <= 0.0:
                    break
                x -= e
                x += _jump(rng)
                if x > b:
                    ok += 1
                    break
        single += ok
        if ok == 2:
            both += 1
    return both, single


@dataclass
class SigmaRateEstimate:
    """Monte-Carlo estimate of ``n P(street at a is non-empty)``."""

    a: float
    n: float
    estimate: float
    se: float
    exact_finite_n: float
    replicas: int
    pooled_estimate: float = math.nan
    comparison: Optional[dict] = None

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - 1.96 * self.se, self.estimate + 1.96 * self.se


def estimate_sigma_rate(a: float, n: float, replicas: int, rng=None, n_compare: Optional[float] = None) -> SigmaRateEstimate:
    """Estimate the rate at which the street at level ``a`` is non-empty.

    A replica draws two independent excursions and succeeds when both pass
    ``na``. ``exact_finite_n`` is ``n p^2`` with ``p`` the passage
    probability computed from the scale function. ``pooled_estimate`` uses
    the single-excursion frequency squared. With ``n_compare`` a second
    estimate is made and a Richardson extrapolation under an
    ``n^(-1/2)`` error model is reported.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    rng = as_generator(rng)
    b = n * a
    both, single = _reach_pairs(rng, int(replicas), float(b))
    p = both / replicas
    est = SigmaRateEstimate(float(a), float(n), n * p, n * math.sqrt(p * (1 - p) / replicas),
                            n * reach_probability(b) ** 2, int(replicas), n * (single / (2 * replicas)) ** 2)
    if n_compare is not None:
        other = estimate_sigma_rate(a, n_compare, replicas, rng)
        lo, hi = (est, other) if n < n_compare else (other, est)
        ratio = math.sqrt(hi.n / lo.n)
        rich = (ratio * hi.estimate - lo.estimate) / (ratio - 1.0)
        joint_se = math.hypot(est.se, other.se)
        est.comparison = {
            "n": other.n, "estimate": other.estimate, "se": other.se,
            "richardson": rich, "z": abs(est.estimate - other.estimate) / joint_se if joint_se > 0 else 0.0,
        }
    return est


# ------------------------------------------------------------------ entrance law


LIMIT_FORMS = ("nominal", "corrected")


def street_length_mean(a: float, form: str = "nominal") -> float:
    """Mean street length under the entrance law.

    ``nominal``: ``3 sqrt(a) / (2 sqrt(2 pi))``. ``corrected``: ``(2/pi) sqrt(a)``,
    the limit of ``W(na)/sqrt(2n)`` (the mean number of crossings is ``W(na)``).
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if form == "nominal":
        return 3.0 * math.sqrt(a) / (2.0 * math.sqrt(2.0 * math.pi))
    if form == "corrected":
        return 2.0 / math.pi * math.sqrt(a)
    raise ValueError(form)


def _gstar_unit_mass() -> float:
    # int_0^1 (1 - sqrt(1-s)) s^(-3/2) ds via s = w^2: int_0^1 2(1-sqrt(1-w^2))/w^2 dw
    from scipy.integrate import quad

    return quad(lambda w: 2.0 * (1.0 - math.sqrt(1.0 - w * w)) / (w * w) if w > 0 else 1.0, 0.0, 1.0,
                epsabs=1e-13, epsrel=1e-13)[0]


GSTAR_UNIT_MASS = _gstar_unit_mass()


def gstar_mass(a: float, form: str = "nominal", min_age: float = 0.0) -> float:
    """Total mass of the age rate on ``(min_age, a)``."""
    if form == "nominal":
        if min_age > 0:
            from scipy.integrate import quad

            return quad(lambda v: limit_rate_gstar(a, v, "nominal"), min_age, a)[0]
        return GSTAR_UNIT_MASS / math.sqrt(a)
    if min_age <= 0:
        raise ValueError("the corrected rate needs min_age > 0")
    from scipy.integrate import quad

    # int_eps^a 0.5 sqrt((a-v)/a) v^(-3/2) dv with v = a w^2
    w0 = math.sqrt(min_age / a)
    return quad(lambda w: math.sqrt(1.0 - w * w) / (w * w), w0, 1.0)[0] / math.sqrt(a)


def sample_gstar_ages(a: float, size: int, rng=None, form: str = "nominal", min_age: float = 0.0) -> np.ndarray:
    """Ages with density proportional to the age rate on ``(min_age, a)``.

    With ``v = a w^2`` the nominal density in ``w`` is
    ``2(1 - sqrt(1-w^2))/w^2 <= 2`` on ``(0, 1)`` and the corrected one is
    ``sqrt(1-w^2)/w^2``; both are sampled by rejection.
    """
    rng = as_generator(rng)
    out = np.empty(0)
    w0 = math.sqrt(min_age / a) if min_age > 0 else 0.0
    while out.size < size:
        k = max(2 * (size - out.size), 16)
        if form == "nominal":
            w = rng.uniform(w0, 1.0, k)
            f = np.where(w > 0, 2.0 * (1.0 - np.sqrt(1.0 - w * w)) / np.maximum(w * w, 1e-300), 1.0)
            keep = rng.random(k) * 2.0 < f
        elif form == "corrected":
            if w0 <= 0:
                raise ValueError("the corrected rate needs min_age > 0")
            # proposal density proportional to w^-2 on (w0, 1)
            u = rng.random(k)
            w = 1.0 / (1.0 / w0 - u * (1.0 / w0 - 1.0))
            keep = rng.random(k) < np.sqrt(np.maximum(1.0 - w * w, 0.0))
        else:
            raise ValueError(form)
        out = np.concatenate([out, a * w[keep] ** 2])
    return out[:size]


@functools.lru_cache(maxsize=32)
def _clock_law(a: float, n: float):
    b = n * a
    table = scale_function(_table_range(b))
    x, cdf, _ = excursion_undershoot_law(b, table, START_CROSSING)
    return x / n, cdf


def sample_clock(a: float, size: int, rng=None, n: float = 1000.0,
                 reference_level: Optional[float] = None) -> np.ndarray:
    """Clock ages: first undershoot at ``na`` (divided by ``n``) of a reflected excursion that reaches ``na``.

    The law is computed exactly at finite ``n`` from the scale function; the
    initial jump exceeding ``na`` contributes an atom at ``a``. With
    ``reference_level`` the law is computed once at that level and rescaled
    by ``a / reference_level`` (exact in the scaling limit, where the clock
    law at level ``a`` is ``a`` times a fixed law).
    """
    rng = as_generator(rng)
    lev = float(a) if reference_level is None else float(reference_level)
    x, cdf = _clock_law(lev, float(n))
    u = rng.random(size)
    out = np.where(u < cdf[-1], np.interp(u, cdf, x), lev)
    return out * (float(a) / lev)


def entrance_sample(a: float, rng=None, *, form: str = "nominal", n_clock: float = 1000.0,
                    min_age: Optional[float] = None, max_atoms: int = 1_000_000,
                    clock_reference: Optional[float] = None) -> Street:
    """One street from the non-empty entrance law at level ``a``.

    The length is exponential with mean :func:`street_length_mean`; atoms
    form a Poisson process of unit rate in position times the age rate in
    age; the clock follows :func:`sample_clock` (``clock_reference`` is
    passed through).

    Raises
    ------
    RuntimeError
        If more than ``max_atoms`` atoms would be drawn.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    rng = as_generator(rng)
    lam = street_length_mean(a, form)
    eps = (0.0 if form == "nominal" else 1e-3 * a) if min_age is None else float(min_age)
    E = float(rng.exponential(lam))
    mass = gstar_mass(a, form, eps)
    k = int(rng.poisson(E * mass))
    if k > max_atoms:
        raise RuntimeError("atom guard exceeded")
    pos = np.sort(rng.uniform(0.0, E, k))
    ages = sample_gstar_ages(a, k, rng, form, eps)
    R = float(sample_clock(a, 1, rng, n_clock, clock_reference)[0])
    return Street(float(a), pos, ages, E, R, None, eps)


def entrance_lengths(a: float, size: int, rng=None, form: str = "nominal") -> np.ndarray:
    rng = as_generator(rng)
    return rng.exponential(street_length_mean(a, form), size)


# ------------------------------------------------------------------ transition kernel


@numba.njit(cache=True)
def _transition_kernel(rng, sigma0, sigma1, clock_pre, clock_post, slot_pre, slot_post, max_jumps):
    buf = np.empty((64, 4))
    buf = _push(buf, 0, clock_pre, clock_post, 0, 1.0)
    m = 1
    h = clock_post
    status = 0
    for k in range(slot_pre.size):
        T = slot_post[k]
        rec = T > h
        buf = _push(buf, m, slot_pre[k], T, 0, 1.0 if rec else 0.0)
        m += 1
        if rec:
            p = h
            h = T
        else:
            p = T
        if p > sigma1:
            p = sigma1
        buf, m, p, h, _, st = _continue(rng, buf, m, p, h, 0, sigma1, sigma0, max_jumps)
        if st:
            status = 1
            break
    return buf[:m].copy(), status


def _residual_given_age(J: np.ndarray, sigma0: float, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pre-level and top of a crossing jump with undershoot ``J`` at ``sigma0``.

    Ordinary jumps have law ``L`` conditioned to exceed ``J``. An undershoot
    of at least ``sigma0`` marks an initial jump from 0 (size-biased law)
    whose excess over ``sigma0`` is its initial age.
    """
    pre = sigma0 - J
    initial = J >= sigma0
    life = ((u * jump_sf(J)) ** (-2.0 / 3.0) - 1.0) / 2.0
    v = crossing_jump_quantile(1.0 - u * crossing_jump_sf(sigma0))
    top = np.where(initial, np.maximum(v, sigma0 * (1 + 1e-15)), pre + np.maximum(life, J))
    return pre, top


@dataclass
class TransitionInfo:
    slots: int
    observed: int
    filled: int


def transition_sample(street: Street, a1: float, n: float, rng=None, *, min_age: Optional[float] = None,
                      return_info: bool = False, max_jumps: int = 100_000_000):
    """Push a street at level ``a0`` up to ``a1`` through a finite-n reduced contour.

    The street is embedded at ``sigma0 = n a0`` with
    ``m = max(round(I sqrt(2n)), #atoms)`` crossings. Atoms take the slot
    nearest to ``pos sqrt(2n)``; the remaining slots get undershoots from
    the conditioned undershoot law at ``sigma0`` restricted below
    ``n * min_age`` (ages the street does not resolve). Each crossing jump
    gets an independent top given its undershoot. The clock is processed
    first, then the slots from the first crossing (``k = m``) to the last;
    every slot runs an excursion above ``sigma0`` under the record rule
    relative to the clock top. The output is the street at ``a1``.

    ``n`` is a fidelity parameter: the construction is exact for the
    finite-n reduced contour given its crossings at ``a0``.
    """
    rng = as_generator(rng)
    a0 = street.level
    if not 0 < a0 < a1:
        raise ValueError("requires 0 < a0 < a1")
    if street.R is None:
        return (Street(float(a1), np.empty(0), np.empty(0), 0.0, None, float(n)), TransitionInfo(0, 0, 0)) \
            if return_info else Street(float(a1), np.empty(0), np.empty(0), 0.0, None, float(n))
    s = math.sqrt(2.0 * n)
    sigma0, sigma1 = n * a0, n * a1
    eps = street.min_age if min_age is None else float(min_age)
    k_atoms = street.n_atoms
    m = max(int(round(street.I * s)), k_atoms)
    J = np.full(m, np.nan)
    taken = np.zeros(m + 1, dtype=bool)
    for pos, age in sorted(zip(street.positions, street.ages)):
        k = min(max(int(round(pos * s)), 1), m)
        if taken[k]:
            free = np.flatnonzero(~taken[1:]) + 1
            k = int(free[np.argmin(np.abs(free - k))])
        taken[k] = True
        J[k - 1] = age * n
    empty = np.isnan(J)
    n_fill = int(empty.sum())
    if n_fill:
        table = scale_function(_table_range(sigma0))
        v, cdf = conditional_undershoot_cdf(sigma0, table)
        # without a resolution cutoff the street lists only some crossings; fill from the full law
        cap = float(np.interp(min(eps * n, sigma0), v, cdf)) if eps > 0 else float(cdf[-1])
        J[empty] = np.interp(rng.random(n_fill) * cap, cdf, v)
        J[empty] = np.maximum(J[empty], 1e-12)
    u = rng.random(m + 1)
    pre, top = _residual_given_age(np.concatenate([[street.R * n], J]), sigma0, u)
    # slots are processed in time order: k = m first
    order = np.arange(m, 0, -1)
    buf, status = _transition_kernel(rng, float(sigma0), float(sigma1), float(pre[0]), float(top[0]),
                                     pre[order].copy(), top[order].copy(), int(max_jumps))
    if status:
        raise RuntimeError("jump budget exhausted")
    out = street_from_jumps(buf[:, 0], buf[:, 1], a1, n)
    info = TransitionInfo(m, k_atoms, n_fill)
    return (out, info) if return_info else out


def atom_matching_distance(x: Street, y: Street) -> float:
    """Largest age gap after matching atoms in position order (``inf`` if counts differ)."""
    if x.n_atoms != y.n_atoms:
        return math.inf
    if x.n_atoms == 0:
        return 0.0
    return float(np.max(np.abs(np.sort(x.ages) - np.sort(y.ages))))
