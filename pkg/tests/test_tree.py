import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsde_lab.errors import (
    DepthMismatch,
    EmptySupport,
    InvalidStoppingTime,
    NonStochasticLaw,
    NotCentered,
    TerminalNode,
    TreeError,
)
from rbsde_lab.instances import random_tree
from rbsde_lab.tree import (
    ScenarioTree,
    StoppingTime,
    build_tree,
    conditional_expectation,
    count_stopping_times,
    enumerate_stopping_times,
    m_norms,
    node_stats,
    represent_martingale,
    stop_time_eval,
)

TERN = [0.5, 0.25, 0.25]


def one_step(p):
    return ScenarioTree.from_kernel(1, p)


# --- build_tree
def test_binary_kernel_unrolls_to_seven_nodes():
    tree = build_tree({"horizon": 2, "state_count": 2, "kernel": [0.5, 0.5]})
    assert tree.n_nodes == 7
    assert [len(layer) for layer in tree.layers] == [1, 2, 4]


def test_degenerate_kernel_is_a_chain():
    tree = build_tree({"horizon": 3, "kernel": [1.0, 0.0]})
    assert tree.n_nodes == 4
    assert all(len(tree.children(n)) == 1 for n in range(3))


def test_ternary_kernel_has_thirteen_nodes():
    tree = build_tree({"horizon": 2, "state_count": 3, "kernel": TERN})
    assert tree.n_nodes == 1 + 3 + 9


def test_markov_kernel_uses_current_state_row():
    k = [[0.5, 0.5], [0.0, 1.0]]
    tree = build_tree({"horizon": 2, "kernel": k, "initial_state": 1})
    assert tree.n_nodes == 1 + 2 + 3  # state 2 is absorbing
    assert np.allclose(tree.law[tree.index["r.2"]], [0.0, 1.0])


def test_bad_sums_and_supports_raise():
    with pytest.raises(NonStochasticLaw):
        build_tree({"horizon": 1, "kernel": [0.5, 0.4]})
    with pytest.raises(NonStochasticLaw):
        build_tree({"horizon": 1, "kernel": [1.2, -0.2]})
    nodes = [
        {"id": "a", "time": 0, "children": [{"state": 1, "prob": 0.0, "id": "b"}]},
        {"id": "b", "time": 1, "children": []},
    ]
    with pytest.raises(EmptySupport):
        build_tree({"nodes": nodes, "state_count": 2})


def test_explicit_nodes_depth_mismatch():
    nodes = [
        {"id": "a", "time": 0, "children": [{"state": 1, "prob": 0.5, "id": "b"}, {"state": 2, "prob": 0.5, "id": "c"}]},
        {"id": "b", "time": 1, "children": [{"state": 1, "prob": 1.0, "id": "d"}]},
        {"id": "c", "time": 1, "children": []},
        {"id": "d", "time": 2, "children": []},
    ]
    with pytest.raises(DepthMismatch):
        build_tree({"nodes": nodes, "state_count": 2})


def test_explicit_zero_probability_child_is_kept_off_support():
    nodes = [
        {"id": "a", "time": 0, "children": [{"state": 1, "prob": 1.0, "id": "b"}, {"state": 2, "prob": 0.0, "id": "c"}]},
        {"id": "b", "time": 1, "children": []},
        {"id": "c", "time": 1, "children": []},
    ]
    tree = build_tree({"nodes": nodes, "state_count": 2})
    assert tree.n_nodes == 3
    assert tree.support(0) == (0,)


def test_empty_support_from_kernel_matrix():
    with pytest.raises(EmptySupport):
        ScenarioTree.from_kernel(1, [[0.0, 0.0], [0.5, 0.5]])


# --- node_stats
def test_binary_stats():
    st_ = node_stats(one_step([0.5, 0.5]), 0)
    assert np.allclose(st_.psi, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)
    assert np.allclose(st_.psi_pinv, [[1, -1], [-1, 1]], atol=1e-12)


def test_deterministic_stats_are_zero():
    st_ = node_stats(one_step([1.0, 0.0]), 0)
    assert np.all(st_.psi == 0)
    assert np.all(st_.psi_pinv == 0)


def test_ternary_stats():
    st_ = node_stats(one_step(TERN), 0)
    assert np.allclose(np.diag(st_.psi), [0.25, 0.1875, 0.1875])
    assert np.allclose(st_.psi @ np.ones(3), 0, atol=1e-15)


def test_terminal_stats_raise():
    tree = one_step([0.5, 0.5])
    with pytest.raises(TerminalNode):
        node_stats(tree, 1)


def test_pinv_identities_on_random_trees():
    rng = np.random.default_rng(3)
    for _ in range(30):
        tree = random_tree(rng)
        for n in range(tree.n_nodes):
            if tree.is_terminal(n):
                continue
            s = tree.stats(n)
            P, Q = s.psi, s.psi_pinv
            assert np.allclose(P @ Q @ P, P, atol=1e-10)
            assert np.allclose(Q @ P @ Q, Q, atol=1e-10)
            assert np.allclose(P, P.T)
            assert np.linalg.eigvalsh(P).min() > -1e-14
            assert np.allclose(P @ np.ones(tree.state_count), 0, atol=1e-12)
            for i in range(tree.state_count):
                if s.p[i] == 0:
                    assert np.allclose(P[:, i], 0)
            # projector onto the Q-space
            proj = Q @ P
            v = rng.normal(size=tree.state_count)
            v = np.where(s.p > 0, v, 0)
            v -= v.sum() / max(len(s.support), 1) * (s.p > 0)
            assert np.allclose(proj @ v, v, atol=1e-10)


# --- conditional expectation and representation
def test_conditional_expectation_examples():
    tree = one_step([0.5, 0.5])
    assert conditional_expectation(tree, [0, 2, 0], 0) == pytest.approx(1.0)
    tree = one_step([1.0, 0.0])
    assert conditional_expectation(tree, [0, 7], 0) == pytest.approx(7.0)
    tree = one_step(TERN)
    assert conditional_expectation(tree, [0, 4, 0, -4], 0) == pytest.approx(1.0)


def test_represent_martingale_examples():
    tree = one_step([0.5, 0.5])
    assert np.allclose(represent_martingale(tree, 0, [1, -1]), [1, -1])
    assert np.allclose(represent_martingale(tree, 0, [0, 0]), 0)
    tree = one_step(TERN)
    z = represent_martingale(tree, 0, [1, -1, -1])
    for i in range(3):
        assert z @ (np.eye(3)[i] - np.array(TERN)) == pytest.approx([1, -1, -1][i], abs=1e-12)
    assert abs(z.sum()) < 1e-12
    # generic linear-solve oracle: least squares on the Q-space
    A = np.vstack([np.eye(3) - np.array(TERN), np.ones(3)])
    ref, *_ = np.linalg.lstsq(A, np.array([1.0, -1, -1, 0]), rcond=None)
    assert np.allclose(z, ref, atol=1e-12)


def test_represent_martingale_rejects_uncentered():
    with pytest.raises(NotCentered):
        represent_martingale(one_step([0.5, 0.5]), 0, [1, 0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000))
def test_representation_reexpands(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        s = tree.stats(n)
        h = rng.normal(size=tree.state_count)
        h = np.where(s.p > 0, h - s.p @ h, 0.0)
        z = represent_martingale(tree, n, h)
        for i in s.support:
            assert abs(z @ (np.eye(tree.state_count)[i] - s.p) - h[i]) < 1e-10
        # martingale difference is centered
        assert np.abs(s.p @ s.increments()).max() < 1e-12


# --- norms
def test_m_norms_examples():
    s = node_stats(one_step([0.5, 0.5]), 0)
    assert m_norms(s, [1, -1]) == pytest.approx((1.0, 2.0))
    assert m_norms(s, [3, 3]) == pytest.approx((0.0, 0.0), abs=1e-12)
    s = node_stats(one_step([0.7, 0.3, 0.0]), 0)
    assert m_norms(s, [0, 0, 1]) == pytest.approx((0.0, 0.0), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_norm_vanishes_exactly_on_null_directions(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        s = tree.stats(n)
        off = s.p == 0
        null = rng.normal() * np.ones(tree.state_count) + np.where(off, rng.normal(size=tree.state_count), 0)
        assert m_norms(s, null)[0] < 1e-7
        z = rng.normal(size=tree.state_count)
        h = np.where(~off, z - s.p @ z, 0)
        if np.abs(h).max() > 1e-6:
            assert m_norms(s, z)[0] > 0


# --- stopping times
def test_stop_time_eval_examples():
    tree = ScenarioTree.from_kernel(2, [0.5, 0.5])
    time = tree.time.astype(float)
    root = StoppingTime.at_time(tree, 0)
    assert stop_time_eval(tree, time, root).expectation == 0.0
    end = StoppingTime.at_time(tree, 2)
    assert stop_time_eval(tree, time, end).expectation == pytest.approx(2.0)
    flags = np.zeros(tree.n_nodes, dtype=bool)
    flags[tree.index["r.1"]] = True
    tau = StoppingTime.from_flags(tree, flags)
    assert stop_time_eval(tree, time, tau).expectation == pytest.approx(1.5)


def test_invalid_stopping_time():
    tree = ScenarioTree.from_kernel(2, [0.5, 0.5])
    with pytest.raises(InvalidStoppingTime):
        StoppingTime.from_flags(tree, [True, False])


def test_enumeration_counts_match():
    tree = ScenarioTree.from_kernel(2, [0.5, 0.5])
    taus = list(enumerate_stopping_times(tree))
    assert len(taus) == count_stopping_times(tree) == 5
    assert len({t.stop.tobytes() for t in taus}) == 5
    tern = ScenarioTree.from_kernel(2, TERN)
    assert count_stopping_times(tern) == 1 + 2 ** 3


def test_tree_arrays_are_read_only():
    tree = ScenarioTree.from_kernel(1, [0.5, 0.5])
    with pytest.raises(ValueError):
        tree.law[0, 0] = 0.3


def test_unknown_tree_format():
    with pytest.raises(TreeError):
        build_tree({"horizon": 2})
