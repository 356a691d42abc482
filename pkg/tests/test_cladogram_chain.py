import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctlab import cladogram_chain as cc
from ctlab.stats_harness import chi_square_gof, two_sample_ks


@pytest.mark.parametrize("n", range(1, 8))
def test_shape_counts_are_double_factorials(n):
    assert len(cc.enumerate_rooted_shapes(n)) == cc.double_factorial(2 * n - 3)


def test_caterpillar_structure():
    t = cc.RootedBinaryTree.caterpillar(4)
    t.audit()
    assert t.canonical_code() == "(1,(2,(3,4)))"
    assert t.n_edges == 7


def test_remove_then_insert_restores_tree():
    t = cc.RootedBinaryTree.caterpillar(5)
    r = cc.remove_leaf(t, 3)
    r.audit() if False else None  # labels are no longer 1..n
    back = cc.insert_leaf(r, r.merged_edge, 3)
    assert back.canonical_code() == t.canonical_code()


def test_copies_are_independent():
    t = cc.RootedBinaryTree.caterpillar(4)
    u = cc.remove_leaf(t, 2)
    assert t.n_leaves == 4 and u.n_leaves == 3
    t.audit()


def test_invalid_operations():
    t = cc.RootedBinaryTree.caterpillar(3)
    with pytest.raises(KeyError):
        t.remove_leaf_inplace(9)
    with pytest.raises(ValueError):
        cc.RootedBinaryTree.single_leaf().remove_leaf_inplace(1)
    with pytest.raises(ValueError):
        t.insert_leaf_inplace(int(t.edges()[0]), 2)
    with pytest.raises(KeyError):
        t.insert_leaf_inplace(999, 7)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_exact_matrix_is_doubly_stochastic(n):
    P, codes = cc.exact_transition_matrix(n)
    assert np.allclose(P.sum(axis=1), 1.0)
    # the uniform law is stationary
    assert np.allclose(P.sum(axis=0), 1.0)
    assert len(set(codes)) == len(codes)


def test_transition_frequencies_n4(rng):
    P, codes = cc.exact_transition_matrix(4)
    run = cc.discrete_run(cc.RootedBinaryTree.caterpillar(4), 100_000, rng)
    z = cc.transition_z_scores(cc.transition_counts(run, codes), P)
    assert np.max(z) <= 4.0


def test_stationary_census_n4(rng, tmp_path):
    P, codes = cc.exact_transition_matrix(4)
    thin = cc.spectral_thinning(P)
    run = cc.discrete_run(cc.RootedBinaryTree.caterpillar(4), 6000 * thin, rng, thin)
    counts = cc.shape_census(run[1:], codes)
    assert chi_square_gof(counts, np.ones(len(codes)), 0.001).passed
    p = tmp_path / "census.csv"
    cc.write_census_csv(codes, counts, p, cc.enumerate_rooted_shapes(4))
    rows = p.read_text().splitlines()
    assert rows[0] == "canonical_code,count" and len(rows) == 16
    assert sum(int(r.rsplit(",", 1)[1]) for r in rows[1:]) == counts.sum()


def test_random_uniform_is_uniform(rng):
    _, codes = cc.exact_transition_matrix(4)
    draws = [cc.RootedBinaryTree.random_uniform(4, rng).cluster_code() for _ in range(3000)]
    assert chi_square_gof(cc.shape_census(np.array(draws), codes), np.ones(15)).passed


def _birth_death_at(k0, t_obs, n, rng):
    # leaf count of a whole tree: k leaves, 2k-1 edges; up rate 2k-1, down rate 2k
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        k, t = k0, 0.0
        while k > 0:
            up, down = 2 * k - 1, 2 * k
            t += rng.exponential(1.0 / (up + down))
            if t > t_obs:
                break
            k += 1 if rng.random() * (up + down) < up else -1
        out[i] = k
    return out


def test_poissonized_leaf_count_law(rng):
    from scipy.stats import chi2_contingency

    counts = cc.leaf_count_curve(cc.RootedBinaryTree.single_leaf(), [0.5], 4000, rng)[:, 0]
    oracle = _birth_death_at(1, 0.5, 4000, rng)
    cells = np.minimum(np.stack([counts, oracle]), 4)
    table = np.array([np.bincount(c, minlength=5) for c in cells])
    assert chi2_contingency(table).pvalue > 0.01


def _clade_birth_death(k0, n, rng, horizon):
    # direct oracle: k leaves, 2k-1 edges including the stem; up rate 2k-1, down rate 2k
    out = np.full(n, np.inf)
    for i in range(n):
        k, t = k0, 0.0
        while k > 0:
            up, down = 2 * k - 1, 2 * k
            t += rng.exponential(1.0 / (up + down))
            if t > horizon:
                break
            k += 1 if rng.random() * (up + down) < up else -1
        if k == 0:
            out[i] = t
    return out


def test_clade_extinction_matches_birth_death_oracle(rng):
    tree = cc.RootedBinaryTree.caterpillar(4)
    v = tree.parent(tree.leaf_vertex(4))  # cherry (3, 4)
    assert tree.leaves_below(v) == [3, 4]
    ext = cc.clade_extinction_times(tree, v, 3000, 1e4, rng)
    oracle = _clade_birth_death(2, 3000, rng, 1e4)
    assert two_sample_ks(ext, oracle).passed


def test_track_subtree_path(rng):
    tree = cc.RootedBinaryTree.caterpillar(4)
    v = tree.parent(tree.leaf_vertex(4))
    tr = cc.track_subtree(tree, v, 1e4, rng)
    ks = [k for _, k in tr.leaf_count_path]
    assert ks[0] == 2 and np.all(np.abs(np.diff(ks)) == 1)
    if tr.extinct_at is not None:
        assert ks[-1] == 0


def test_events_jsonl(tmp_path, rng):
    run = cc.poissonized_run(cc.RootedBinaryTree.caterpillar(3), 0.5, rng)
    p = tmp_path / "ev.jsonl"
    cc.write_events_jsonl(run.events, p)
    rows = [json.loads(x) for x in p.read_text().splitlines()]
    assert len(rows) == len(run.events)
    assert all(r["kind"] in ("birth", "death") for r in rows)
    assert all(a["t"] <= b["t"] for a, b in zip(rows, rows[1:]))


def test_newick_round_structure():
    t = cc.RootedBinaryTree.caterpillar(3)
    assert t.to_newick() == "(1,(2,3));"


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32), st.integers(1, 30))
def test_discrete_steps_preserve_invariants(n, seed, steps):
    rng = np.random.default_rng(seed)
    t = cc.RootedBinaryTree.random_uniform(n, rng)
    for s in range(steps):
        t, ev = cc.discrete_step(t, rng, s)
        assert ev.kind == "move"
    t.audit()
    assert t.n_leaves == n


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32))
def test_poissonized_run_keeps_tree_valid(n, seed):
    t = cc.RootedBinaryTree.random_uniform(n, seed)
    run = cc.poissonized_run(t, 0.3, seed)
    t.audit()
    assert t.n_leaves == n + sum(e.kind == "birth" for e in run.events) - sum(e.kind == "death" for e in run.events)
