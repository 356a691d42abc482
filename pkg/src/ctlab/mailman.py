"""Mailmen on nested streets and the proper k-trees they code.

A mailman walks through a sequence of streets. On each street it picks an
atom with probability proportional to its age (step ``varsigma = 1``,
``A`` = atom position) or the clock (``varsigma = 0``, ``A`` = street
length); the age of the pick is the level of the next street. Partial sums
of ``A`` are heights above the root, and iid mailmen on one collection of
streets code a consistent family of rooted trees with edge lengths.

Streets are generated lazily and stored by address (the tuple of picks
leading to them), so members of one family share every street on their
common prefix.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._rng import as_generator
from .splitting_jccp import Street, entrance_sample, transition_sample

CLOCK = -1  # pick index for the clock
DEFAULT_DEPTH = 32


# ------------------------------------------------------------------ street sources


@dataclass
class EntranceSource:
    """Street generator ``age -> Street`` drawing from the entrance law.

    The clock law is computed once at ``reference_level`` and rescaled.
    """

    form: str = "nominal"
    n_clock: float = 1000.0
    reference_level: float = 1.0

    def __call__(self, age: float, rng) -> Street:
        return entrance_sample(age, rng, form=self.form, n_clock=self.n_clock,
                               clock_reference=self.reference_level)


def pick_probabilities(street: Street) -> tuple[np.ndarray, float]:
    """Probabilities of each atom and of the clock.

    Atom ``i`` is chosen with probability ``age_i / (nu(I) + R)``; the
    clock with ``R / (nu(I) + R)``. A street with zero total mass gives
    zeros everywhere.
    """
    R = street.R or 0.0
    mass = float(np.sum(street.ages)) + R
    if mass <= 0:
        return np.zeros(street.n_atoms), 0.0
    return street.ages / mass, R / mass


def pick(street: Street, rng) -> Optional[tuple[int, float, float]]:
    """One mailman step: ``(index, A, age)`` with index ``CLOCK`` for the clock, or ``None`` if terminal."""
    p_atoms, p_clock = pick_probabilities(street)
    if p_clock == 0 and p_atoms.size == 0:
        return None
    u = rng.random()
    if u < p_clock or p_atoms.size == 0:
        return CLOCK, float(street.I), float(street.R)
    c = np.cumsum(p_atoms)
    i = min(int(np.searchsorted(c, u - p_clock, side="right")), p_atoms.size - 1)
    return i, float(street.positions[i]), float(street.ages[i])


# ------------------------------------------------------------------ mailmen


@dataclass
class Mailman:
    """Truncated mailman ``(A_k, varsigma_k)`` with the picked ages and street addresses."""

    A: np.ndarray
    varsigma: np.ndarray
    ages: np.ndarray
    picks: tuple = ()
    depth: int = DEFAULT_DEPTH
    tail_bound: float = math.nan

    @property
    def total(self) -> float:
        return float(np.sum(self.A))

    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.A)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "varsigma": self.varsigma.tolist(), "ages": self.ages.tolist(),
                "depth": self.depth, "tail_bound": self.tail_bound}


def _walk(get_street: Callable[[tuple, float], Street], level: float, depth: int, rng) -> Mailman:
    A = np.zeros(depth)
    sig = np.zeros(depth, dtype=np.int8)
    ages = np.zeros(depth)
    key: tuple = ()
    age = level
    for k in range(depth):
        st = get_street(key, age)
        step = pick(st, rng)
        if step is None:
            break
        i, a, y = step
        A[k], sig[k], ages[k] = a, 0 if i == CLOCK else 1, y
        key = key + (i,)
        age = y
    m = Mailman(A, sig, ages, key, depth)
    m.tail_bound = l1_mass_diagnostic(A).tail
    return m


def sample_mailman(street_source: Callable[[float, object], Street], level: float, depth: int = DEFAULT_DEPTH,
                   rng=None) -> Mailman:
    """A single mailman on fresh streets: the street after a pick of age ``y`` is drawn from the source at ``y``.

    The first street is drawn at ``level``. A street with no atoms and no
    clock is terminal and the remaining entries are 0.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rng = as_generator(rng)
    return _walk(lambda key, age: street_source(age, rng), level, depth, rng)


# ------------------------------------------------------------------ tail diagnostic


@dataclass
class L1Diagnostic:
    partial_sum: float
    rate: float
    tail: float


def l1_mass_diagnostic(A) -> L1Diagnostic:
    """Partial sum of ``A`` and a geometric fit of its decay.

    ``rate`` is ``exp`` of the least-squares slope of ``log A_k`` over the
    positive entries (0 when at most one is positive); ``tail`` is the
    geometric remainder ``A_last rate / (1 - rate)`` (``inf`` if
    ``rate >= 1``). Summability is never asserted.
    """
    A = np.asarray(A, dtype=float)
    s = float(A.sum())
    k = np.flatnonzero(A > 0)
    if k.size < 2:
        return L1Diagnostic(s, 0.0, 0.0)
    slope = np.polyfit(k.astype(float), np.log(A[k]), 1)[0]
    r = float(math.exp(slope))
    last = float(A[k[-1]]) * r ** (A.size - 1 - k[-1])
    tail = math.inf if r >= 1 else last * r / (1 - r)
    return L1Diagnostic(s, r, tail)


# ------------------------------------------------------------------ proper k-trees


@dataclass
class ProperKTree:
    """Rooted tree with leaves ``1..k``; vertex 0 is the root.

    Vertices carry heights above the root; edge lengths are height
    differences. Leaf ``j`` is vertex ``leaf_vertex[j - 1]``.
    """

    parent: list
    height: list
    leaf_vertex: list
    coincident: int = 0

    @property
    def k(self) -> int:
        return len(self.leaf_vertex)

    def edge_length(self, v: int) -> float:
        return self.height[v] - self.height[self.parent[v]]

    def _ancestors(self, v: int) -> list[int]:
        out = [v]
        while self.parent[v] >= 0:
            v = self.parent[v]
            out.append(v)
        return out

    def lca_height(self, i: int, j: int) -> float:
        anc = set(self._ancestors(self.leaf_vertex[i - 1]))
        v = self.leaf_vertex[j - 1]
        while v not in anc:
            v = self.parent[v]
        return self.height[v]

    def distance(self, i: int, j: int) -> float:
        """Path length between leaves ``i`` and ``j`` measured in the tree."""
        hi = self.height[self.leaf_vertex[i - 1]]
        hj = self.height[self.leaf_vertex[j - 1]]
        return hi + hj - 2.0 * self.lca_height(i, j)

    def distance_matrix(self) -> np.ndarray:
        k = self.k
        D = np.zeros((k, k))
        for i in range(1, k + 1):
            for j in range(i + 1, k + 1):
                D[i - 1, j - 1] = D[j - 1, i - 1] = self.distance(i, j)
        return D

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in self.parent]
        for v, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(v)
        return kids

    def reduced(self, leaves: list[int]) -> "ProperKTree":
        """Subtree spanned by the root and ``leaves`` (relabelled ``1..len``), degree-2 vertices suppressed."""
        keep = {0}
        for j in leaves:
            keep.update(self._ancestors(self.leaf_vertex[j - 1]))
        kids = self.children()
        leaf_set = {self.leaf_vertex[j - 1] for j in leaves}
        new_id = {0: 0}
        parent, height = [-1], [0.0]
        stack = [(0, 0)]
        while stack:
            v, nv = stack.pop()
            for c in kids[v]:
                if c not in keep:
                    continue
                # skip chains of vertices with one kept child that are not leaves
                while c not in leaf_set and sum(1 for g in kids[c] if g in keep) == 1:
                    c = next(g for g in kids[c] if g in keep)
                new_id[c] = len(parent)
                parent.append(nv)
                height.append(self.height[c])
                stack.append((c, new_id[c]))
        return ProperKTree(parent, height, [new_id[self.leaf_vertex[j - 1]] for j in leaves])

    def canonical(self, digits: int = 9) -> str:
        """Label-aware canonical Newick string with rounded branch lengths."""
        return self.to_newick(digits, canonical=True)

    def to_newick(self, digits: int = 12, canonical: bool = False) -> str:
        kids = self.children()
        label = {v: str(j + 1) for j, v in enumerate(self.leaf_vertex)}

        def rec(v: int) -> str:
            parts = [rec(c) for c in kids[v]]
            if canonical:
                parts.sort()
            inner = f"({','.join(parts)})" if parts else ""
            if v in label:
                inner = f"{inner}{label[v]}" if not parts else f"{inner}{label[v]}"
            if v == 0:
                return inner
            return f"{inner}:{round(self.edge_length(v), digits)!r}"

        return rec(0) + ";"


def divergence_index(x: Mailman, y: Mailman) -> int:
    """First index where ``(A, varsigma)`` differ; the depth if they never do."""
    d = min(x.A.size, y.A.size)
    diff = np.flatnonzero((x.A[:d] != y.A[:d]) | (x.varsigma[:d] != y.varsigma[:d]))
    return int(diff[0]) if diff.size else d


def meet_height(x: Mailman, y: Mailman) -> float:
    """Height of the most recent common ancestor: ``min`` of the partial sums up to the divergence index."""
    m = divergence_index(x, y)
    sx, sy = x.partial_sums(), y.partial_sums()
    m = min(m, sx.size - 1)
    return float(min(sx[m], sy[m]))


def recipe_distance(x: Mailman, y: Mailman) -> float:
    """Leaf distance from the mailman sums alone."""
    return x.total + y.total - 2.0 * meet_height(x, y)


def ktree_from_mailmen(mailmen: list[Mailman], tol: float = 1e-12) -> ProperKTree:
    """Build the proper k-tree coded by ``mailmen`` (leaf ``j`` from mailman ``j``).

    Leaf ``j+1`` is attached on the path to the earlier leaf ``t*`` with the
    latest divergence index, at the meet height of the two. Ties in the
    index go to the leaf with the highest meet.
    """
    if len(mailmen) < 1:
        raise ValueError("need at least one mailman")
    depths = {m.A.size for m in mailmen}
    if len(depths) != 1:
        raise ValueError("mailmen must share one truncation depth")
    parent, height = [-1, 0], [0.0, mailmen[0].total]
    leaf_vertex = [1]
    coincident = 0
    for j in range(1, len(mailmen)):
        new = mailmen[j]
        idx = [divergence_index(mailmen[t], new) for t in range(j)]
        # several leaves may share the deepest index (a street visited by
        # three or more mailmen); the new leaf branches off the highest of them
        deepest = max(idx)
        cands = [t for t in range(j) if idx[t] == deepest]
        meets = [meet_height(mailmen[t], new) for t in cands]
        t_star = cands[int(np.argmax(meets))]
        h = max(meets)
        if idx[t_star] >= new.A.size:
            coincident += 1
        # walk up from leaf t* to the edge containing height h
        v = leaf_vertex[t_star]
        while parent[v] >= 0 and height[parent[v]] > h + tol:
            v = parent[v]
        if abs(height[v] - h) <= tol:
            attach = v
        elif parent[v] >= 0 and abs(height[parent[v]] - h) <= tol:
            attach = parent[v]
        else:
            attach = len(parent)
            parent.append(parent[v])
            height.append(h)
            parent[v] = attach
        leaf = len(parent)
        parent.append(attach)
        height.append(new.total)
        leaf_vertex.append(leaf)
    if coincident:
        warnings.warn(f"{coincident} leaves coincide with earlier leaves", RuntimeWarning, stacklevel=2)
    return ProperKTree(parent, height, leaf_vertex, coincident)


def four_point_violation(D: np.ndarray) -> float:
    """Largest violation of the four-point condition over all quadruples.

    For each quadruple the two largest of the three pair sums must agree.
    """
    k = D.shape[0]
    worst = 0.0
    for a in range(k):
        for b in range(a + 1, k):
            for c in range(b + 1, k):
                for d in range(c + 1, k):
                    s = sorted((D[a, b] + D[c, d], D[a, c] + D[b, d], D[a, d] + D[b, c]))
                    worst = max(worst, s[2] - s[1])
    return worst


def nested_consistency_violation(mailmen: list[Mailman]) -> int:
    """Count ``j`` for which the ``(j+1)``-tree reduced to leaves ``1..j`` differs from the ``j``-tree."""
    bad = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        full = ktree_from_mailmen(mailmen)
        for j in range(1, len(mailmen)):
            direct = ktree_from_mailmen(mailmen[:j])
            red = full.reduced(list(range(1, j + 1)))
            if direct.canonical() != red.canonical():
                bad += 1
    return bad


def leaf_tightness_stat(tree: ProperKTree) -> float:
    """``min_{j >= 2} d(leaf 1, leaf j)``."""
    if tree.k < 2:
        raise ValueError("need k >= 2")
    return min(tree.distance(1, j) for j in range(2, tree.k + 1))


# ------------------------------------------------------------------ families and transitions


@dataclass
class StreetNode:
    """A stored street with the level it was generated at and its parent at the lower level (if any)."""

    street: Street
    level: float
    parent: Optional[tuple] = None
    case: str = "entrance"


@dataclass
class MailmanFamily:
    """Exchangeable mailmen sharing one lazily grown street store."""

    level: float
    depth: int
    store: dict = field(default_factory=dict)
    members: list = field(default_factory=list)
    source: Callable = field(default_factory=EntranceSource)

    def street_at(self, key: tuple, age: float, rng) -> Street:
        node = self.store.get(key)
        if node is None:
            node = StreetNode(self.source(age, rng), age)
            self.store[key] = node
        return node.street

    def add_member(self, rng) -> Mailman:
        m = _walk(lambda key, age: self.street_at(key, age, rng), self.level, self.depth, rng)
        self.members.append(m)
        return m

    def to_json(self) -> str:
        return json.dumps({
            "level": self.level,
            "depth": self.depth,
            "members": [m.to_dict() for m in self.members],
            "streets": {",".join(map(str, k)): {**n.street.to_dict(), "case": n.case} for k, n in self.store.items()},
        })


def sample_family(a: float, count: int, depth: int = DEFAULT_DEPTH, rng=None,
                  source: Optional[Callable] = None) -> MailmanFamily:
    """``count`` exchangeable mailmen at level ``a``.

    The first street is drawn from the entrance law at ``a``; a member
    follows stored streets along its prefix and triggers a fresh street
    (entrance law at the age just picked) at its first new address.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = as_generator(rng)
    fam = MailmanFamily(float(a), int(depth), source=source or EntranceSource())
    for _ in range(count):
        fam.add_member(rng)
    return fam


@dataclass
class TransitionStats:
    case_i: int = 0
    case_ii: int = 0
    unlisted_parents: int = 0
    first_step_case_i: list = field(default_factory=list)
    first_step_p_case_i: list = field(default_factory=list)
    monotone_violations: int = 0


def _match_age(street: Street, target: float, tol: float) -> Optional[int]:
    ages = list(street.ages) + ([street.R] if street.R is not None else [])
    idx = [i for i, v in enumerate(ages) if abs(v - target) <= tol]
    if not idx:
        return None
    i = idx[0]
    return CLOCK if i == street.n_atoms else i


def one_step_transition(family: MailmanFamily, a1: float, rng=None, *, n: float = 1000.0, tol: float = 1e-9):
    """Evolve a family from its level ``a0`` to ``a1 > a0``.

    The first street evolves through :func:`transition_sample`. A street at
    address ``key + (i,)`` is generated when first needed: if the pick's
    age ``y`` is below ``a1 - a0`` the subtree is new and the street is
    drawn from the entrance law at ``y`` (case i); otherwise the pick
    existed at ``a0`` with age ``y - (a1 - a0)``, its lower-level street is
    found (or lazily drawn) and pushed to ``y`` (case ii). Returns the new
    family with as many members as the old one, and :class:`TransitionStats`.
    """
    rng = as_generator(rng)
    a0 = family.level
    if not a1 > a0:
        raise ValueError("requires a1 > a0")
    delta = a1 - a0
    new = MailmanFamily(float(a1), family.depth, source=family.source)
    stats = TransitionStats()
    root = family.store.get(())
    root_street = root.street if root is not None else family.street_at((), a0, rng)
    new.store[()] = StreetNode(_push_street(root_street, a1, n, rng), a1, (), "ii")

    def lower_street(pkey: tuple, y0: float) -> tuple[tuple, Street]:
        """Street of the lower-level pick with age ``y0`` inside the lower street at ``pkey``."""
        parent_street = family.store[pkey].street
        i = _match_age(parent_street, y0, tol)
        if i is None:
            stats.unlisted_parents += 1
            key = pkey + ("u", round(y0, 12))
        else:
            key = pkey + (i,)
        return key, family.street_at(key, y0, rng)

    def get(key: tuple, age: float) -> Street:
        node = new.store.get(key)
        if node is not None:
            return node.street
        pnode = new.store[key[:-1]]
        if age < delta or pnode.parent is None:
            stats.case_i += 1
            node = StreetNode(family.source(age, rng), age, None, "i")
        else:
            stats.case_ii += 1
            lkey, lstreet = lower_street(pnode.parent, age - delta)
            node = StreetNode(_push_street(lstreet, age, n, rng), age, lkey, "ii")
        new.store[key] = node
        return node.street

    for _ in range(len(family.members)):
        m = _walk(get, a1, family.depth, rng)
        new.members.append(m)
        cases = [new.store[m.picks[:k + 1]].case for k in range(len(m.picks)) if m.picks[:k + 1] in new.store]
        if "i" in cases and any(c == "ii" for c in cases[cases.index("i"):]):
            stats.monotone_violations += 1
    first = new.store[()].street
    p_atoms, p_clock = pick_probabilities(first)
    p_i = float(np.sum(p_atoms[first.ages < delta])) + (p_clock if (first.R or 0.0) < delta else 0.0)
    stats.first_step_p_case_i.append(p_i)
    m0 = new.members[0]
    stats.first_step_case_i.append(bool(m0.ages[0] < delta) if m0.picks else False)
    return new, stats


def _push_street(street: Street, a1: float, n: float, rng) -> Street:
    if street.R is None:
        return Street(float(a1), np.empty(0), np.empty(0), 0.0, None, float(n))
    return transition_sample(street, a1, n, rng)
