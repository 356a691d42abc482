import json
import math
import re
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctlab import mailman as mm
from ctlab.splitting_jccp import Street


def _street(pos, ages, I, R):
    return Street(1.0, np.asarray(pos, float), np.asarray(ages, float), float(I), R)


def _coded_family(paths, depth, seed):
    """Mailmen whose A values are a function of the address prefix, as on shared streets."""
    rng = np.random.default_rng(seed)
    table = {}
    out = []
    for p in paths:
        A = np.zeros(depth)
        sig = np.zeros(depth, dtype=np.int8)
        for k in range(depth):
            key = tuple(p[: k + 1])
            if key not in table:
                table[key] = float(rng.exponential())
            A[k] = table[key]
            sig[k] = 0 if p[k] == mm.CLOCK else 1
        out.append(mm.Mailman(A, sig, np.ones(depth), tuple(p), depth))
    return out


def _newick_distances(s):
    """Leaf-to-leaf distances from a Newick string with branch lengths (test oracle)."""
    tokens = re.findall(r"\(|\)|,|:[-0-9.e+]+|[^(),:;]+", s.rstrip(";"))
    parent, length, label = [-1], [0.0], {}
    cur, last, prev = 0, None, None
    for tok in tokens:
        closed, prev = prev == ")", tok
        if closed and tok not in "(),:" and not tok.startswith(":"):
            label[int(tok)] = last  # internal node carrying a leaf label
        elif tok == "(":
            parent.append(cur)
            length.append(0.0)
            cur = len(parent) - 1
            last = None
        elif tok == ",":
            last = None
        elif tok == ")":
            last = cur
            cur = parent[cur]
        elif tok.startswith(":"):
            length[last] = float(tok[1:])
        else:
            parent.append(cur)
            length.append(0.0)
            last = len(parent) - 1
            label[int(tok)] = last
    # tokens open one extra group for the outer parentheses of the root
    depth = {}

    def h(v):
        if v not in depth:
            depth[v] = 0.0 if parent[v] < 0 else h(parent[v]) + length[v]
        return depth[v]

    def anc(v):
        out = []
        while v >= 0:
            out.append(v)
            v = parent[v]
        return out

    k = len(label)
    D = np.zeros((k, k))
    for i in range(1, k + 1):
        for j in range(1, k + 1):
            ai = set(anc(label[i]))
            m = next(v for v in anc(label[j]) if v in ai)
            D[i - 1, j - 1] = h(label[i]) + h(label[j]) - 2 * h(m)
    return D


def test_pick_probabilities():
    s = _street([0.1, 0.2], [1.0, 3.0], 0.3, 4.0)
    p, pc = mm.pick_probabilities(s)
    assert np.allclose(p, [1 / 8, 3 / 8]) and pc == 0.5
    assert mm.pick(_street([], [], 0.0, None), np.random.default_rng(0)) is None


def test_pick_frequencies(rng):
    s = _street([0.1, 0.2], [1.0, 3.0], 0.3, 4.0)
    idx = [mm.pick(s, rng)[0] for _ in range(20_000)]
    freq = [np.mean(np.array(idx) == i) for i in (0, 1, mm.CLOCK)]
    assert np.allclose(freq, [1 / 8, 3 / 8, 1 / 2], atol=0.015)


def test_clock_pick_uses_street_length():
    s = _street([], [], 0.7, 0.2)
    i, A, y = mm.pick(s, np.random.default_rng(1))
    assert (i, A, y) == (mm.CLOCK, 0.7, 0.2)


def test_three_way_divergence_is_a_tree():
    # three mailmen leave one street at different points
    fam = _coded_family([[0, 1, 1], [0, 2, 1], [0, 3, 1]], 3, 4)
    t = mm.ktree_from_mailmen(fam)
    D = t.distance_matrix()
    R = np.array([[0.0 if i == j else mm.recipe_distance(x, y) for j, y in enumerate(fam)] for i, x in enumerate(fam)])
    assert np.max(np.abs(D - R)) < 1e-12
    assert mm.four_point_violation(D) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from([0, 1, mm.CLOCK]), min_size=6, max_size=6), min_size=2, max_size=9),
       st.integers(0, 2**32))
def test_recipe_and_tree_distances_agree(paths, seed):
    fam = _coded_family(paths, 6, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t = mm.ktree_from_mailmen(fam)
    D = t.distance_matrix()
    R = np.array([[0.0 if i == j else mm.recipe_distance(x, y) for j, y in enumerate(fam)] for i, x in enumerate(fam)])
    assert np.max(np.abs(D - R)) < 1e-9
    assert mm.four_point_violation(D) < 1e-9
    # leaf heights are the mailman totals
    for j, m in enumerate(fam):
        assert t.height[t.leaf_vertex[j]] == pytest.approx(m.total)
    assert mm.nested_consistency_violation(fam) == 0


def test_coincident_leaves_warn():
    fam = _coded_family([[0, 0], [0, 0]], 2, 1)
    with pytest.warns(RuntimeWarning):
        t = mm.ktree_from_mailmen(fam)
    assert t.coincident == 1


def test_depth_mismatch_raises():
    a = _coded_family([[0, 0]], 2, 1)[0]
    b = _coded_family([[0, 0, 0]], 3, 1)[0]
    with pytest.raises(ValueError):
        mm.ktree_from_mailmen([a, b])


def test_family_tree_invariants(rng):
    fam = mm.sample_family(1.0, 10, 16, rng)
    t = mm.ktree_from_mailmen(fam.members)
    D = t.distance_matrix()
    assert mm.four_point_violation(D) < 1e-9
    assert mm.nested_consistency_violation(fam.members) == 0
    assert np.allclose(D, D.T) and np.all(np.diag(D) == 0)


def test_newick_encodes_the_distances(rng):
    fam = mm.sample_family(1.0, 7, 16, rng)
    t = mm.ktree_from_mailmen(fam.members)
    s = t.to_newick()
    assert s.endswith(";") and s.count("(") == s.count(")")
    assert np.allclose(_newick_distances(s), t.distance_matrix(), atol=1e-9)


def test_reduced_tree_matches_subfamily(rng):
    fam = mm.sample_family(1.0, 8, 16, rng)
    full = mm.ktree_from_mailmen(fam.members)
    assert full.reduced([1, 2, 3]).canonical() == mm.ktree_from_mailmen(fam.members[:3]).canonical()


def test_shared_streets_along_prefix(rng):
    fam = mm.sample_family(1.0, 6, 12, rng)
    for x in fam.members:
        for y in fam.members:
            m = mm.divergence_index(x, y)
            assert np.array_equal(x.A[:m], y.A[:m])


def test_family_json(rng):
    fam = mm.sample_family(1.0, 3, 8, rng)
    d = json.loads(fam.to_json())
    assert d["level"] == 1.0 and len(d["members"]) == 3
    assert "" in d["streets"]
    assert len(d["members"][0]["A"]) == 8


def test_single_mailman(rng):
    m = mm.sample_mailman(mm.EntranceSource(), 1.0, 8, rng)
    assert m.A.shape == (8,) and np.all(m.A >= 0)
    assert set(np.unique(m.varsigma)) <= {0, 1}
    # ages never exceed the street level they were picked on
    lv = np.concatenate([[1.0], m.ages[:-1]])
    assert np.all(m.ages <= lv + 1e-12)


def test_l1_diagnostic():
    A = 0.5 ** np.arange(10)
    d = mm.l1_mass_diagnostic(A)
    assert d.rate == pytest.approx(0.5)
    assert d.partial_sum + d.tail == pytest.approx(2.0, rel=1e-9)
    assert mm.l1_mass_diagnostic(np.ones(5)).tail == math.inf


def test_leaf_tightness_decreases_with_k(rng):
    med = {}
    for k in (4, 16):
        vals = []
        for r in range(40):
            fam = mm.sample_family(1.0, k, 16, np.random.default_rng([r, 7]))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                vals.append(mm.leaf_tightness_stat(mm.ktree_from_mailmen(fam.members)))
        med[k] = np.median(vals)
    assert med[16] < med[4]


def test_one_step_transition(rng):
    generated = 0
    for _ in range(10):
        fam = mm.sample_family(1.0, 6, 8, rng)
        new, stats = mm.one_step_transition(fam, 1.5, rng, n=200.0)
        assert new.level == 1.5 and len(new.members) == 6
        assert stats.monotone_violations == 0
        assert 0.0 <= stats.first_step_p_case_i[0] <= 1.0 + 1e-12
        generated += stats.case_i + stats.case_ii
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            t = mm.ktree_from_mailmen(new.members)
        assert mm.four_point_violation(t.distance_matrix()) < 1e-9
    assert generated > 0
    with pytest.raises(ValueError):
        mm.one_step_transition(fam, 0.5, rng)
