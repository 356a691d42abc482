"""Rooted leaf-labelled binary trees under the Aldous remove/re-insert chain.

Trees live in an index arena. Every non-root vertex owns the edge to its
parent, so an edge id is the id of its lower endpoint. A tree with ``n``
labelled leaves has ``n - 1`` branchpoints, one root of degree 1 and
``2n - 1`` edges.

The discrete chain removes a uniform leaf and re-inserts it on a uniform
edge of the reduced tree (``2n - 3`` choices). The Poissonized chain kills
each leaf at rate 2 and splits each edge at rate 1.

Bulk runs execute in compiled kernels that mutate the same arena as the
Python-level methods.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numba
import numpy as np

from ._rng import as_generator

# arena rows
PARENT, LEFT, RIGHT, LABEL, LEAFPOS, EDGEPOS, LEAVES, EDGES, LBL2V, FREE, CLADE, FREELBL = range(12)
NROWS = 12
# meta slots
M_LEAVES, M_EDGES, M_FREE, M_NEXT_LABEL, M_HIGH, M_FREE_LABELS = range(6)
ROOT = 0
NONE = -1
MAX_ENUM_N = 7


# ------------------------------------------------------------------ compiled core


@numba.njit(cache=True)
def _grow(S, need):
    cap = S.shape[1]
    new_cap = max(2 * cap, need + 8)
    T = np.full((S.shape[0], new_cap), -1, dtype=np.int64)
    T[:, :cap] = S
    T[CLADE, cap:] = 0
    T[LABEL, cap:] = 0
    return T


@numba.njit(cache=True)
def _alloc(S, meta):
    if meta[M_FREE] > 0:
        meta[M_FREE] -= 1
        v = S[FREE, meta[M_FREE]]
    else:
        v = meta[M_HIGH]
        meta[M_HIGH] += 1
        if v >= S.shape[1]:
            S = _grow(S, v + 1)
    S[PARENT, v] = NONE
    S[LEFT, v] = NONE
    S[RIGHT, v] = NONE
    S[LABEL, v] = 0
    S[LEAFPOS, v] = NONE
    S[EDGEPOS, v] = NONE
    S[CLADE, v] = 0
    return S, v


@numba.njit(cache=True)
def _release(S, meta, v):
    S[PARENT, v] = NONE
    S[LEFT, v] = NONE
    S[RIGHT, v] = NONE
    S[LABEL, v] = 0
    S[CLADE, v] = 0
    S[FREE, meta[M_FREE]] = v
    meta[M_FREE] += 1


@numba.njit(cache=True)
def _list_add(S, meta, row, posrow, slot, v):
    k = meta[slot]
    S[row, k] = v
    S[posrow, v] = k
    meta[slot] = k + 1


@numba.njit(cache=True)
def _list_remove(S, meta, row, posrow, slot, v):
    k = S[posrow, v]
    last = meta[slot] - 1
    u = S[row, last]
    S[row, k] = u
    S[posrow, u] = k
    S[row, last] = NONE
    S[posrow, v] = NONE
    meta[slot] = last


@numba.njit(cache=True)
def _replace_child(S, g, old, new):
    if S[LEFT, g] == old:
        S[LEFT, g] = new
    else:
        S[RIGHT, g] = new


@numba.njit(cache=True)
def _remove_leaf(S, meta, label):
    """Remove a leaf; return the id of the merged edge (``-1`` if the tree empties)."""
    v = S[LBL2V, label]
    p = S[PARENT, v]
    _list_remove(S, meta, LEAVES, LEAFPOS, M_LEAVES, v)
    _list_remove(S, meta, EDGES, EDGEPOS, M_EDGES, v)
    S[LBL2V, label] = NONE
    if p == ROOT:
        S[LEFT, ROOT] = NONE
        _release(S, meta, v)
        return NONE
    s = S[LEFT, p] if S[RIGHT, p] == v else S[RIGHT, p]
    g = S[PARENT, p]
    _replace_child(S, g, p, s)
    S[PARENT, s] = g
    _list_remove(S, meta, EDGES, EDGEPOS, M_EDGES, p)
    _release(S, meta, v)
    _release(S, meta, p)
    return s


@numba.njit(cache=True)
def _insert_leaf(S, meta, c, label):
    """Split edge ``c`` with a new branchpoint carrying leaf ``label``."""
    S, w = _alloc(S, meta)
    S, v = _alloc(S, meta)
    if label >= S.shape[1]:
        S = _grow(S, label + 1)
    g = S[PARENT, c]
    _replace_child(S, g, c, w)
    S[PARENT, w] = g
    S[LEFT, w] = c
    S[RIGHT, w] = v
    S[PARENT, c] = w
    S[PARENT, v] = w
    S[LABEL, v] = label
    S[LBL2V, label] = v
    S[CLADE, w] = S[CLADE, c]
    S[CLADE, v] = S[CLADE, c]
    _list_add(S, meta, EDGES, EDGEPOS, M_EDGES, w)
    _list_add(S, meta, EDGES, EDGEPOS, M_EDGES, v)
    _list_add(S, meta, LEAVES, LEAFPOS, M_LEAVES, v)
    return S, v


@numba.njit(cache=True)
def _cluster_code(S, meta):
    # sorted leaf-label bitmasks of branchpoints, packed 7 bits each (n <= 7)
    n_edges = meta[M_EDGES]
    order = np.empty(n_edges + 1, dtype=np.int64)
    stack = np.empty(n_edges + 1, dtype=np.int64)
    top = 0
    m = 0
    stack[top] = ROOT
    top += 1
    while top > 0:
        top -= 1
        u = stack[top]
        order[m] = u
        m += 1
        if S[LEFT, u] != NONE:
            stack[top] = S[LEFT, u]
            top += 1
        if S[RIGHT, u] != NONE:
            stack[top] = S[RIGHT, u]
            top += 1
    mask = np.zeros(S.shape[1], dtype=np.int64)
    masks = np.empty(m, dtype=np.int64)
    k = 0
    for i in range(m - 1, -1, -1):
        u = order[i]
        if S[LABEL, u] > 0:
            mask[u] = 1 << (S[LABEL, u] - 1)
        elif u != ROOT:
            mask[u] = mask[S[LEFT, u]] | mask[S[RIGHT, u]]
            masks[k] = mask[u]
            k += 1
    masks = np.sort(masks[:k])
    code = 0
    for i in range(k):
        code = (code << 7) | masks[i]
    return code


@numba.njit(cache=True)
def _discrete_kernel(S, meta, rng, n_steps, thin):
    codes = np.empty(n_steps + 1, dtype=np.int64)
    codes[0] = _cluster_code(S, meta)
    for i in range(n_steps):
        for _ in range(thin):
            v = S[LEAVES, int(rng.random() * meta[M_LEAVES])]
            label = S[LABEL, v]
            _remove_leaf(S, meta, label)
            c = S[EDGES, int(rng.random() * meta[M_EDGES])]
            S, _ = _insert_leaf(S, meta, c, label)
        codes[i + 1] = _cluster_code(S, meta)
    return S, codes


@numba.njit(cache=True)
def _poisson_kernel(S, meta, rng, horizon, obs_times, n_clades, stop_on_clades, log):
    # clade ids 1..n_clades; returns (S, counts at obs, clade extinction times, log arrays)
    n_obs = obs_times.size
    counts_obs = np.zeros(n_obs, dtype=np.int64)
    clade_obs = np.zeros((n_clades + 1, n_obs), dtype=np.int64)
    clade_n = np.zeros(n_clades + 1, dtype=np.int64)
    for i in range(meta[M_LEAVES]):
        clade_n[S[CLADE, S[LEAVES, i]]] += 1
    ext = np.full(n_clades + 1, np.inf)
    for c in range(1, n_clades + 1):
        if clade_n[c] == 0:
            ext[c] = 0.0
    cap = 1024 if log else 1
    lt = np.empty(cap)
    lk = np.empty(cap, dtype=np.int64)
    ll = np.empty(cap, dtype=np.int64)
    le = np.empty(cap, dtype=np.int64)
    lc = np.empty(cap, dtype=np.int64)
    n_log = 0
    t = 0.0
    j = 0
    alive_clades = 0
    for c in range(1, n_clades + 1):
        if clade_n[c] > 0:
            alive_clades += 1
    while True:
        nl = meta[M_LEAVES]
        ne = meta[M_EDGES]
        rate = 2.0 * nl + ne
        dt = rng.standard_exponential() / rate if rate > 0 else np.inf
        t_next = t + dt
        while j < n_obs and obs_times[j] < t_next:
            counts_obs[j] = nl
            for c in range(n_clades + 1):
                clade_obs[c, j] = clade_n[c]
            j += 1
        if t_next > horizon or rate == 0.0:
            break
        t = t_next
        u = rng.random() * rate
        if u < 2.0 * nl:
            v = S[LEAVES, min(int(u / 2.0), nl - 1)]
            label = S[LABEL, v]
            c = S[CLADE, v]
            _remove_leaf(S, meta, label)
            S[FREELBL, meta[M_FREE_LABELS]] = label
            meta[M_FREE_LABELS] += 1
            kind = 0
            edge = v
        else:
            e = S[EDGES, min(int(u - 2.0 * nl), ne - 1)]
            if meta[M_FREE_LABELS] > 0:
                meta[M_FREE_LABELS] -= 1
                label = S[FREELBL, meta[M_FREE_LABELS]]
            else:
                label = meta[M_NEXT_LABEL]
                meta[M_NEXT_LABEL] += 1
            S, v = _insert_leaf(S, meta, e, label)
            c = S[CLADE, v]
            kind = 1
            edge = e
        if kind == 0:
            clade_n[c] -= 1
            if c > 0 and clade_n[c] == 0:
                ext[c] = t
                alive_clades -= 1
        else:
            clade_n[c] += 1
        if log:
            if n_log >= lt.size:
                lt2 = np.empty(2 * lt.size)
                lt2[:n_log] = lt
                lt = lt2
                lk = np.concatenate((lk, np.empty(lk.size, dtype=np.int64)))
                ll = np.concatenate((ll, np.empty(ll.size, dtype=np.int64)))
                le = np.concatenate((le, np.empty(le.size, dtype=np.int64)))
                lc = np.concatenate((lc, np.empty(lc.size, dtype=np.int64)))
            lt[n_log] = t
            lk[n_log] = kind
            ll[n_log] = label
            le[n_log] = edge
            lc[n_log] = clade_n[c] if c > 0 else -1
            n_log += 1
        if stop_on_clades and n_clades > 0 and alive_clades == 0:
            break
    while j < n_obs:
        counts_obs[j] = meta[M_LEAVES] if obs_times[j] <= horizon else -1
        for c in range(n_clades + 1):
            clade_obs[c, j] = clade_n[c]
        j += 1
    return S, t, counts_obs, clade_obs, ext, lt[:n_log], lk[:n_log], ll[:n_log], le[:n_log], lc[:n_log]


# ------------------------------------------------------------------ Python API


class RootedBinaryTree:
    """Mutable rooted binary tree with labelled leaves.

    Vertex 0 is the root. Internal methods mutate in place; the module-level
    :func:`remove_leaf` and :func:`insert_leaf` return modified copies.
    """

    def __init__(self, capacity: int = 16):
        cap = max(int(capacity), 4)
        self._S = np.full((NROWS, cap), NONE, dtype=np.int64)
        self._S[LABEL] = 0
        self._S[CLADE] = 0
        self._meta = np.zeros(6, dtype=np.int64)
        self._meta[M_HIGH] = 1
        self._meta[M_NEXT_LABEL] = 1
        self.strict_labels = True
        self.merged_edge: Optional[int] = None

    # construction
    @classmethod
    def single_leaf(cls) -> "RootedBinaryTree":
        t = cls()
        S, v = _alloc(t._S, t._meta)
        S[PARENT, v] = ROOT
        S[LEFT, ROOT] = v
        S[LABEL, v] = 1
        S[LBL2V, 1] = v
        _list_add(S, t._meta, EDGES, EDGEPOS, M_EDGES, v)
        _list_add(S, t._meta, LEAVES, LEAFPOS, M_LEAVES, v)
        t._S = S
        t._meta[M_NEXT_LABEL] = 2
        return t

    @classmethod
    def sapling(cls) -> "RootedBinaryTree":
        """Root, one branchpoint and leaves 1 and 2."""
        t = cls.single_leaf()
        t._insert(t.leaf_vertex(1), 2)
        return t

    @classmethod
    def caterpillar(cls, n: int) -> "RootedBinaryTree":
        """Leaf ``k`` hangs off the spine above leaves ``k+1, ..., n``."""
        if n < 1:
            raise ValueError("n must be positive")
        t = cls.single_leaf()
        for k in range(2, n + 1):
            t._insert(t.leaf_vertex(k - 1), k)
        return t

    @classmethod
    def random_uniform(cls, n: int, rng=None) -> "RootedBinaryTree":
        """Uniform tree with ``n`` labelled leaves by sequential uniform edge insertion."""
        rng = as_generator(rng)
        t = cls.single_leaf()
        for k in range(2, n + 1):
            edges = t.edges()
            t._insert(int(edges[rng.integers(edges.size)]), k)
        return t

    def copy(self) -> "RootedBinaryTree":
        t = RootedBinaryTree.__new__(RootedBinaryTree)
        t._S = self._S.copy()
        t._meta = self._meta.copy()
        t.strict_labels = self.strict_labels
        t.merged_edge = self.merged_edge
        return t

    # queries
    @property
    def n_leaves(self) -> int:
        return int(self._meta[M_LEAVES])

    @property
    def n_edges(self) -> int:
        return int(self._meta[M_EDGES])

    def labels(self) -> list[int]:
        return sorted(int(self._S[LABEL, v]) for v in self._S[LEAVES, : self.n_leaves])

    def edges(self) -> np.ndarray:
        """Edge ids in a canonical (sorted) order."""
        return np.sort(self._S[EDGES, : self.n_edges])

    def leaf_vertex(self, label: int) -> int:
        if label <= 0 or label >= self._S.shape[1] or self._S[LBL2V, label] == NONE:
            raise KeyError(f"unknown label {label}")
        return int(self._S[LBL2V, label])

    def parent(self, v: int) -> int:
        return int(self._S[PARENT, v])

    def children(self, v: int) -> tuple[int, ...]:
        return tuple(int(c) for c in (self._S[LEFT, v], self._S[RIGHT, v]) if c != NONE)

    def label_of(self, v: int) -> int:
        return int(self._S[LABEL, v])

    def is_internal(self, v: int) -> bool:
        return self._is_live(v) and v != ROOT and self._S[LABEL, v] == 0

    def _is_live(self, v: int) -> bool:
        if v < 0 or v >= self._meta[M_HIGH]:
            return False
        if v == ROOT:
            return True
        pos = self._S[EDGEPOS, v]
        return pos != NONE and pos < self.n_edges and self._S[EDGES, pos] == v

    def leaves_below(self, v: int) -> list[int]:
        out, stack = [], [v]
        while stack:
            u = stack.pop()
            if self._S[LABEL, u] > 0:
                out.append(int(self._S[LABEL, u]))
            stack.extend(self.children(u))
        return sorted(out)

    # mutation
    def _insert(self, edge: int, label: int) -> int:
        self._S, v = _insert_leaf(self._S, self._meta, int(edge), int(label))
        self._meta[M_NEXT_LABEL] = max(self._meta[M_NEXT_LABEL], label + 1)
        return int(v)

    def remove_leaf_inplace(self, label: int) -> "RootedBinaryTree":
        """Delete leaf ``label`` with its edge and branchpoint; the merged edge id is stored in ``merged_edge``."""
        self.leaf_vertex(label)
        if self.n_leaves < 2:
            raise ValueError("cannot remove a leaf from a tree with fewer than 2 leaves")
        self.merged_edge = int(_remove_leaf(self._S, self._meta, int(label)))
        return self

    def insert_leaf_inplace(self, edge: int, label: int) -> "RootedBinaryTree":
        """Split ``edge`` and attach a new leaf ``label``."""
        if not self._is_live(edge) or edge == ROOT:
            raise KeyError(f"invalid edge id {edge}")
        if label <= 0:
            raise ValueError("labels are positive integers")
        if label < self._S.shape[1] and self._S[LBL2V, label] != NONE:
            raise ValueError(f"duplicate label {label}")
        self._insert(edge, label)
        return self

    # canonical forms
    def canonical_code(self) -> str:
        """Nested-parenthesis code with children ordered by smallest leaf label."""
        def rec(u: int) -> tuple[int, str]:
            lab = int(self._S[LABEL, u])
            if lab > 0:
                return lab, str(lab)
            parts = sorted(rec(c) for c in self.children(u))
            return parts[0][0], "(" + ",".join(p[1] for p in parts) + ")"

        kids = self.children(ROOT)
        return rec(kids[0])[1] if kids else "()"

    def cluster_code(self) -> int:
        """Packed integer code from branchpoint clusters (``n <= 7``)."""
        if self.n_leaves > MAX_ENUM_N or (self.labels() and max(self.labels()) > MAX_ENUM_N):
            raise ValueError("cluster_code needs labels <= 7")
        return int(_cluster_code(self._S, self._meta))

    def to_newick(self, lengths: Optional[dict] = None) -> str:
        return self.canonical_code() + ";"

    # audit
    def audit(self) -> None:
        """Raise ``AssertionError`` if any structural invariant fails."""
        S, n = self._S, self.n_leaves
        live = {ROOT} | {int(v) for v in S[EDGES, : self.n_edges]}
        if n == 0:
            assert S[LEFT, ROOT] == NONE and S[RIGHT, ROOT] == NONE and self.n_edges == 0
            return
        assert S[PARENT, ROOT] == NONE
        assert S[LEFT, ROOT] != NONE and S[RIGHT, ROOT] == NONE, "root must have degree 1"
        seen = set()
        stack = [ROOT]
        while stack:
            u = stack.pop()
            assert u not in seen, "cycle"
            seen.add(u)
            kids = self.children(u)
            for c in kids:
                assert S[PARENT, c] == u, "parent/child mismatch"
            if u != ROOT:
                if S[LABEL, u] > 0:
                    assert len(kids) == 0, "leaf with children"
                    assert S[LBL2V, S[LABEL, u]] == u
                else:
                    assert len(kids) == 2, "internal vertex must have degree 3"
            stack.extend(kids)
        assert seen == live, "disconnected or stale vertices"
        assert self.n_edges == 2 * n - 1, "edge count must be 2n-1"
        labs = self.labels()
        assert len(set(labs)) == n and min(labs) >= 1
        if self.strict_labels:
            assert labs == list(range(1, n + 1)), "labels must be 1..n"
        leaves = {int(v) for v in S[LEAVES, :n]}
        assert leaves == {v for v in live if S[LABEL, v] > 0}

    def __repr__(self) -> str:
        return f"RootedBinaryTree({self.canonical_code()})"


def remove_leaf(tree: RootedBinaryTree, label: int) -> RootedBinaryTree:
    """Copy of ``tree`` with leaf ``label`` removed."""
    return tree.copy().remove_leaf_inplace(label)


def insert_leaf(tree: RootedBinaryTree, edge: int, label: int) -> RootedBinaryTree:
    """Copy of ``tree`` with a leaf ``label`` inserted on ``edge``."""
    return tree.copy().insert_leaf_inplace(edge, label)


# ------------------------------------------------------------------ events


@dataclass
class ChainEvent:
    """One chain event. ``kind`` is ``"death"``, ``"birth"`` or ``"move"`` (discrete step)."""

    time: float
    step: int
    kind: str
    label: int
    edge: int

    def to_dict(self) -> dict:
        return {"t": self.time, "kind": self.kind, "label": self.label, "edge": self.edge}


def write_events_jsonl(events: Iterable[ChainEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_dict()) + "\n")


def discrete_step(tree: RootedBinaryTree, rng=None, step: int = 0) -> tuple[RootedBinaryTree, ChainEvent]:
    """One Aldous move in place: uniform leaf out, uniform edge of the reduced tree in."""
    if tree.n_leaves < 2:
        raise ValueError("need at least 2 leaves")
    rng = as_generator(rng)
    labels = tree.labels()
    label = labels[rng.integers(len(labels))]
    tree.remove_leaf_inplace(label)
    edges = tree.edges()
    edge = int(edges[rng.integers(edges.size)])
    tree.insert_leaf_inplace(edge, label)
    return tree, ChainEvent(float(step + 1), step + 1, "move", int(label), edge)


def discrete_run(tree: RootedBinaryTree, n_steps: int, rng=None, thin: int = 1) -> np.ndarray:
    """Run the discrete chain in place; return cluster codes of the visited states.

    ``codes[0]`` is the initial state and ``codes[i]`` the state after
    ``i * thin`` moves. Requires labels ``<= 7``.
    """
    if tree.n_leaves < 2:
        raise ValueError("need at least 2 leaves")
    tree.cluster_code()
    rng = as_generator(rng)
    tree._S, codes = _discrete_kernel(tree._S, tree._meta, rng, int(n_steps), int(thin))
    return codes


@dataclass
class PoissonRun:
    """Outcome of a Poissonized run."""

    end_time: float
    events: list[ChainEvent]
    leaf_counts: np.ndarray
    obs_times: np.ndarray
    clade_counts: np.ndarray
    clade_extinction: np.ndarray

    @property
    def died(self) -> bool:
        return bool(self.leaf_counts.size and self.leaf_counts[-1] == 0)


def poissonized_run(tree: RootedBinaryTree, horizon: float, rng=None, obs_times: Sequence[float] = (),
                    log: bool = True, clades: Sequence[int] = (), stop_when_clades_extinct: bool = False) -> PoissonRun:
    """Event-driven Poissonized chain, mutating ``tree`` in place.

    Leaves die at rate 2 and edges give birth at rate 1. A birth attaches a
    leaf carrying the most recently freed label, or a new label when none
    is free, so labels stay distinct but need not be ``1..n``. The run stops at ``horizon`` or when no leaf
    remains.

    Parameters
    ----------
    clades : sequence of int
        Internal vertices whose clades (stem edge included) are tracked.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    rng = as_generator(rng)
    tree.strict_labels = False
    _mark_clades(tree, clades)
    obs = np.sort(np.asarray(obs_times, dtype=float))
    S, t_end, counts, clade_obs, ext, lt, lk, ll, le, lc = _poisson_kernel(
        tree._S, tree._meta, rng, float(horizon), obs, len(clades), bool(stop_when_clades_extinct), bool(log))
    tree._S = S
    tree._S[CLADE] = 0
    events = [ChainEvent(float(a), i + 1, "death" if k == 0 else "birth", int(b), int(e))
              for i, (a, k, b, e) in enumerate(zip(lt, lk, ll, le))]
    run = PoissonRun(float(t_end), events, counts, obs, clade_obs[1:], ext[1:])
    run._clade_after = lc  # count of the affected clade after each event, -1 if none
    return run


def _mark_clades(tree: RootedBinaryTree, clades: Sequence[int]) -> None:
    tree._S[CLADE] = 0
    for cid, v in enumerate(clades, start=1):
        if not tree.is_internal(int(v)):
            raise ValueError(f"vertex {v} is not internal")
        stack = [int(v)]
        while stack:
            u = stack.pop()
            if tree._S[CLADE, u] != 0:
                raise ValueError("tracked clades must be disjoint")
            tree._S[CLADE, u] = cid
            stack.extend(tree.children(u))


@dataclass
class SubtreeTracker:
    """Leaf count of one clade along a Poissonized run."""

    vertex: int
    leaf_count_path: list[tuple[float, int]]
    extinct_at: Optional[float] = None


def track_subtree(tree: RootedBinaryTree, vertex: int, horizon: float, rng=None) -> SubtreeTracker:
    """Run the Poissonized chain and follow the clade below ``vertex``.

    The clade contains the leaves below ``vertex`` and its stem edge, so a
    birth on the stem adds a leaf to it.
    """
    if not tree.is_internal(vertex):
        raise ValueError("vertex must be internal")
    k0 = len(tree.leaves_below(vertex))
    run = poissonized_run(tree, horizon, rng, clades=[vertex], stop_when_clades_extinct=True)
    path = [(0.0, k0)]
    for ev, c in zip(run.events, run._clade_after):
        if c >= 0:
            path.append((ev.time, int(c)))
    ext = float(run.clade_extinction[0])
    return SubtreeTracker(int(vertex), path, ext if math.isfinite(ext) else None)


def clade_extinction_times(tree: RootedBinaryTree, vertex: int, n_runs: int, horizon: float, rng=None) -> np.ndarray:
    """Extinction times of the clade below ``vertex`` over independent runs from copies of ``tree``.

    Runs censored at ``horizon`` report ``inf``.
    """
    rng = as_generator(rng)
    out = np.empty(n_runs)
    for i in range(n_runs):
        t = tree.copy()
        _mark_clades(t, [vertex])
        t.strict_labels = False
        res = _poisson_kernel(t._S, t._meta, rng, float(horizon), np.empty(0), 1, True, False)
        out[i] = res[4][1]
    return out


def leaf_count_curve(tree: RootedBinaryTree, obs_times: Sequence[float], n_runs: int, rng=None) -> np.ndarray:
    """Leaf counts at ``obs_times`` for ``n_runs`` Poissonized runs from copies of ``tree``."""
    rng = as_generator(rng)
    obs = np.sort(np.asarray(obs_times, dtype=float))
    out = np.empty((n_runs, obs.size), dtype=np.int64)
    for i in range(n_runs):
        t = tree.copy()
        t.strict_labels = False
        res = _poisson_kernel(t._S, t._meta, rng, float(obs[-1]), obs, 0, False, False)
        out[i] = res[2]
    return out


# ------------------------------------------------------------------ enumeration oracles


def double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def enumerate_rooted_shapes(n: int) -> list[RootedBinaryTree]:
    """All rooted binary trees on leaves ``1..n``, deduplicated by canonical code."""
    if n < 1:
        raise ValueError("n must be positive")
    if n > MAX_ENUM_N:
        raise ValueError(f"n={n} too large for enumeration (max {MAX_ENUM_N})")
    level = {RootedBinaryTree.single_leaf().canonical_code(): RootedBinaryTree.single_leaf()}
    for k in range(2, n + 1):
        nxt: dict[str, RootedBinaryTree] = {}
        for t in level.values():
            for e in t.edges():
                u = insert_leaf(t, int(e), k)
                nxt.setdefault(u.canonical_code(), u)
        level = nxt
    return [level[c] for c in sorted(level)]


def exact_transition_matrix(n: int) -> tuple[np.ndarray, list[int]]:
    """Exact discrete-chain transition matrix over enumerated shapes.

    Returns
    -------
    P : ndarray
        ``P[i, j]`` is the probability of moving from shape ``i`` to ``j``.
    codes : list of int
        Cluster codes indexing the rows.
    """
    shapes = enumerate_rooted_shapes(n)
    codes = [s.cluster_code() for s in shapes]
    index = {c: i for i, c in enumerate(codes)}
    P = np.zeros((len(shapes), len(shapes)))
    w = 1.0 / (n * (2 * n - 3))
    for i, s in enumerate(shapes):
        for label in range(1, n + 1):
            r = remove_leaf(s, label)
            for e in r.edges():
                P[i, index[insert_leaf(r, int(e), label).cluster_code()]] += w
    return P, codes


def spectral_thinning(P: np.ndarray, tol: float = 1e-3) -> int:
    """Smallest ``k`` with ``|lambda_2|^k <= tol``."""
    ev = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    lam = ev[1] if ev.size > 1 else 0.0
    if lam <= 0:
        return 1
    return max(1, int(math.ceil(math.log(tol) / math.log(lam))))


def shape_census(codes: np.ndarray, all_codes: Sequence[int]) -> np.ndarray:
    """Visit counts in the order of ``all_codes``; unknown codes raise."""
    index = {c: i for i, c in enumerate(all_codes)}
    uniq, cnt = np.unique(codes, return_counts=True)
    out = np.zeros(len(all_codes), dtype=np.int64)
    for u, c in zip(uniq, cnt):
        if int(u) not in index:
            raise ValueError(f"visited code {u} is not an enumerated shape")
        out[index[int(u)]] = c
    return out


def write_census_csv(all_codes: Sequence[int], counts: Sequence[int], path, shapes=None) -> None:
    """CSV with header ``canonical_code,count``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("canonical_code,count\n")
        for i, (c, k) in enumerate(zip(all_codes, counts)):
            code = shapes[i].canonical_code() if shapes is not None else str(c)
            fh.write(f"\"{code}\",{int(k)}\n")


def transition_counts(codes: np.ndarray, all_codes: Sequence[int]) -> np.ndarray:
    index = {c: i for i, c in enumerate(all_codes)}
    idx = np.array([index[int(c)] for c in codes])
    m = len(all_codes)
    out = np.zeros((m, m), dtype=np.int64)
    np.add.at(out, (idx[:-1], idx[1:]), 1)
    return out


def transition_z_scores(counts: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Per-entry ``|f_ij - P_ij| / SE_ij``; an observed impossible move gives ``inf``."""
    rows = counts.sum(axis=1, keepdims=True)
    f = counts / np.maximum(rows, 1)
    se = np.sqrt(P * (1.0 - P) / np.maximum(rows, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(f - P) / se
    z = np.where(se > 0, z, np.where(f == P, 0.0, np.inf))
    return z
