import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsde_lab.bsde import (
    AffineDriver,
    ComparisonData,
    FunctionDriver,
    InfAffineDriver,
    YLinearDriver,
    ZeroDriver,
    audit_driver_equivalence,
    bsde_operator,
    comparison_check,
    doob_meyer,
    g_conditional,
    g_expectation,
    induced_driver,
    is_g_supermartingale,
    linear_operator,
    measures_operator,
    solve_bsde,
)
from rbsde_lab.errors import DriverEquivalenceViolation, NotNormalised, RootNotBracketed
from rbsde_lab.instances import random_affine_driver, random_terminal, random_tree
from rbsde_lab.priors import kappa_driver, kappa_limit, scenario_driver
from rbsde_lab.rbsde import solve_rbsde
from rbsde_lab.tree import ScenarioTree, enumerate_stopping_times


def one_step(p):
    return ScenarioTree.from_kernel(1, p)


def edge_residual(tree, sol, driver):
    worst = 0.0
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        s = tree.stats(n)
        for i in s.support:
            c = tree.child_index[n, i]
            rhs = sol.Y[c] + driver(n, sol.Y[n], sol.Z[n]) - (sol.Z[n, i] - sol.Z[n] @ s.p)
            worst = max(worst, abs(sol.Y[n] - rhs))
    return worst


# --- solve_bsde examples
def test_zero_driver_gives_conditional_expectations(binary2):
    xi = np.zeros(binary2.n_nodes)
    xi[binary2.leaves] = [4.0, 0.0, 2.0, -2.0]
    sol = solve_bsde(binary2, xi, ZeroDriver())
    assert sol.Y[binary2.index["r.1"]] == pytest.approx(2.0)
    assert sol.Y[binary2.index["r.2"]] == pytest.approx(0.0)
    assert sol.Y[0] == pytest.approx(1.0)


def test_linear_in_y_step():
    tree = one_step([0.5, 0.5])
    sol = solve_bsde(tree, [0, 1.0, 1.0], AffineDriver(tree, beta=0.5))
    assert sol.Y[0] == pytest.approx(2.0)


def test_kappa_step():
    tree = one_step([0.5, 0.5])
    sol = solve_bsde(tree, [0, 2.0, 0.0], kappa_driver(tree, 0.1))
    assert np.allclose(sol.Z[0], [1, -1])
    assert sol.Y[0] == pytest.approx(0.9)


def test_bracketing_matches_closed_form(ternary2, rng):
    drv = random_affine_driver(rng, ternary2)
    generic = FunctionDriver(lambda n, y, z: drv(n, y, z))
    xi = random_terminal(rng, ternary2)
    a = solve_bsde(ternary2, xi, drv)
    b = solve_bsde(ternary2, xi, generic)
    assert np.allclose(a.Y, b.Y, atol=1e-10)


def test_nonlinear_in_y_driver_by_root_finding(binary2):
    drv = FunctionDriver(lambda n, y, z: 0.3 * np.sin(y) - 0.1 * abs(z[0] - z[1]))
    xi = np.zeros(binary2.n_nodes)
    xi[binary2.leaves] = [3.0, 1.0, 0.0, -2.0]
    sol = solve_bsde(binary2, xi, drv)
    assert edge_residual(binary2, sol, drv) < 1e-9


def test_root_not_bracketed():
    tree = one_step([0.5, 0.5])
    with pytest.raises(RootNotBracketed):
        solve_bsde(tree, [0, 1.0, 0.0], FunctionDriver(lambda n, y, z: y + 1.0))
    with pytest.raises(RootNotBracketed):
        solve_bsde(tree, [0, 1.0, 0.0], AffineDriver(tree, beta=1.0))


def test_solution_is_deterministic(rng):
    tree = random_tree(rng)
    drv = random_affine_driver(rng, tree)
    xi = random_terminal(rng, tree)
    a, b = solve_bsde(tree, xi, drv), solve_bsde(tree, xi, drv)
    assert a.Y.tobytes() == b.Y.tobytes() and a.Z.tobytes() == b.Z.tobytes()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_edge_identity_on_random_trees(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    drv = random_affine_driver(rng, tree)
    sol = solve_bsde(tree, random_terminal(rng, tree), drv)
    assert edge_residual(tree, sol, drv) < 1e-9
    for n in range(tree.n_nodes):
        if not tree.is_terminal(n):
            z = sol.Z[n]
            assert abs(z.sum()) < 1e-9 and np.all(np.abs(z[tree.law[n] == 0]) < 1e-12)


def test_equivalence_audit():
    tree = ScenarioTree.from_kernel(2, [0.6, 0.4, 0.0])
    audit_driver_equivalence(tree, kappa_driver(tree, 0.1))
    with pytest.raises(DriverEquivalenceViolation):
        audit_driver_equivalence(tree, FunctionDriver(lambda n, y, z: z[0]))
    with pytest.raises(DriverEquivalenceViolation):
        solve_bsde(tree, np.zeros(tree.n_nodes), FunctionDriver(lambda n, y, z: -abs(z[2])), audit=True)


# --- g-expectations
def test_g_expectation_needs_normalised_driver(binary2):
    with pytest.raises(NotNormalised):
        g_expectation(binary2, np.zeros(binary2.n_nodes), AffineDriver(binary2, alpha=1.0))


def test_g_expectation_examples(binary2):
    drv = kappa_driver(binary2, 0.2)
    xi = np.zeros(binary2.n_nodes)
    xi[binary2.leaves] = [3.0, 3.0, -1.0, -1.0]  # F_1 measurable
    Y = g_conditional(binary2, xi, drv)
    assert Y[binary2.index["r.1"]] == pytest.approx(3.0)
    assert g_expectation(binary2, xi + 2.5, drv) == pytest.approx(g_expectation(binary2, xi, drv) + 2.5)


def test_inf_of_two_linear_maps_is_min_over_measures():
    tree = one_step([0.5, 0.5])
    g1, g2 = np.array([0.1, -0.1]), np.array([-0.2, 0.2])
    drv = InfAffineDriver([AffineDriver(tree, gamma=g1), AffineDriver(tree, gamma=g2)])
    xi = np.array([0.0, 2.0, 0.0])
    lin = [(np.array([0.5, 0.5]) + g) @ xi[1:] for g in (g1, g2)]
    assert g_expectation(tree, xi, drv) == pytest.approx(min(lin))


def _axiom_failures(tree, drv, rng, tol=1e-9):
    fails = []
    xi = random_terminal(rng, tree)
    Y = g_conditional(tree, xi, drv)
    bump = np.zeros(tree.n_nodes)
    bump[tree.leaves] = rng.random(tree.leaves.size)
    if np.any(g_conditional(tree, xi + bump, drv) < Y - tol):
        fails.append("monotone")
    for t in range(tree.horizon):
        layer = tree.layers[t]
        eta = np.array([rng.normal() for _ in range(tree.n_nodes)])
        at_t = np.array([eta[tree.ancestor_at(n, t)] for n in range(tree.n_nodes)])
        if np.abs(g_conditional(tree, at_t, drv)[layer] - eta[layer]).max() > tol:
            fails.append("trivial")
        if np.abs(g_conditional(tree, xi + at_t, drv)[layer] - Y[layer] - eta[layer]).max() > tol:
            fails.append("translation")
        tower = g_conditional(tree, Y, drv, horizon=t)
        if np.abs(tower[: layer.max() + 1] - Y[: layer.max() + 1]).max() > tol:
            fails.append("tower")
        a = int(rng.choice(layer))
        ind = np.array([1.0 if tree.ancestor_at(n, t) == a else 0.0 for n in range(tree.n_nodes)])
        local = g_conditional(tree, ind * xi, drv)
        if np.abs(local[layer] - ind[layer] * Y[layer]).max() > tol:
            fails.append("local")
    return fails


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_g_expectation_axioms_kappa(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    limits = [kappa_limit(tree, n) for n in range(tree.n_nodes) if not tree.is_terminal(n)]
    kap = min(0.9 * min(limits), 0.5)
    assert _axiom_failures(tree, kappa_driver(tree, kap), rng) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_g_expectation_axioms_scenario(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    scen = {}
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        p = tree.law[n]
        rows = []
        for _ in range(2):
            q = np.zeros_like(p)
            sup = p > 0
            q[sup] = rng.dirichlet(np.ones(sup.sum()))
            rows.append(q)
        scen[tree.ids[n]] = rows
    drv = scenario_driver(tree, rng.random(), scen)
    assert _axiom_failures(tree, drv, rng) == []


# --- induced drivers
def test_induced_driver_examples():
    tree = one_step([0.5, 0.5])
    assert induced_driver(tree, linear_operator, 0, [1.0, -1.0]) == pytest.approx(0.0)
    kap = bsde_operator(kappa_driver(tree, 0.1))
    assert induced_driver(tree, kap, 0, [1.0, -1.0]) == pytest.approx(-0.1)
    two = measures_operator([[0.5, 0.5], [0.6, 0.4]], "inf")
    assert induced_driver(tree, two, 0, [1.0, -1.0]) == pytest.approx(0.0)
    assert induced_driver(tree, two, 0, [-1.0, 1.0]) == pytest.approx(-0.2)


def test_induced_driver_recovers_the_scenario_driver(ternary2, rng):
    pis = [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]
    drv = scenario_driver(ternary2, 0.7, pis)
    G = bsde_operator(drv)
    for _ in range(20):
        z = rng.normal(size=3)
        assert induced_driver(ternary2, G, 0, z) == pytest.approx(drv(0, 0.0, z), abs=1e-12)


# --- Doob-Meyer
def test_doob_meyer_examples(binary2):
    zero = ZeroDriver()
    X = -binary2.time.astype(float)
    dm = doob_meyer(binary2, X, zero)
    assert dm.direction == "increasing"
    assert np.allclose(dm.increments[[0, 1, 2]], 1.0)
    assert dm.martingale_residual < 1e-12
    xi = np.zeros(binary2.n_nodes)
    xi[binary2.leaves] = [1.0, 2.0, 0.0, 5.0]
    M = g_conditional(binary2, xi, kappa_driver(binary2, 0.1))
    assert doob_meyer(binary2, M, kappa_driver(binary2, 0.1)).direction == "constant"
    sub = binary2.time.astype(float)
    assert doob_meyer(binary2, sub, kappa_driver(binary2, 0.1)).direction == "decreasing"


def test_doob_meyer_needs_normalised(binary2):
    with pytest.raises(NotNormalised):
        doob_meyer(binary2, np.zeros(binary2.n_nodes), AffineDriver(binary2, beta=0.1))


def supermartingale(tree, drv, rng):
    X = np.zeros(tree.n_nodes)
    X[tree.leaves] = rng.normal(size=tree.leaves.size)
    for n in reversed(range(tree.n_nodes)):
        if not tree.is_terminal(n):
            from rbsde_lab.bsde import one_step as step

            X[n] = step(tree, n, X, drv)[0] + rng.random()
    return X


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_doob_meyer_recovers_supermartingale_push(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    drv = kappa_driver(tree, 0.0)
    X = supermartingale(tree, drv, rng)
    dm = doob_meyer(tree, X, drv)
    assert dm.direction in ("increasing", "constant")
    assert dm.martingale_residual < 1e-9
    assert is_g_supermartingale(tree, X, drv)
    for c in range(1, tree.n_nodes):
        # predictable: K at a child is fixed by the parent
        assert dm.K[c] == dm.K[tree.parent[c]] + dm.increments[tree.parent[c]]


# --- optional sampling
def optional_sampling_failures(tree, X, drv, tol=1e-9):
    taus = list(enumerate_stopping_times(tree))
    fails = 0
    for sigma in taus:
        for tau in taus:
            ok_order = all(
                tree.time[sigma.stopping_node(tree, int(lf))] <= tree.time[tau.stopping_node(tree, int(lf))]
                for lf in tree.leaves
            )
            if not ok_order:
                continue
            xi = np.zeros(tree.n_nodes)
            for lf in tree.leaves:
                xi[lf] = X[tau.stopping_node(tree, int(lf))]
            Y = g_conditional(tree, xi, drv)
            for lf in tree.leaves:
                s = sigma.stopping_node(tree, int(lf))
                if X[s] < Y[s] - tol:
                    fails += 1
    return fails


@pytest.mark.parametrize("kernel,T", [([0.5, 0.5], 2), ([0.3, 0.7], 3), ([0.5, 0.25, 0.25], 2)])
def test_optional_sampling_all_pairs(kernel, T):
    rng = np.random.default_rng(T)
    tree = ScenarioTree.from_kernel(T, kernel)
    assert tree.n_nodes <= 15
    drv = kappa_driver(tree, 0.2)
    X = supermartingale(tree, drv, rng)
    assert optional_sampling_failures(tree, X, drv) == 0


# --- comparison
def comparison_pair(rng, tree, obstacle=True):
    d1 = random_affine_driver(rng, tree)
    shift = rng.random(tree.n_nodes)
    d2 = AffineDriver(tree, alpha=d1.alpha - shift, beta=d1.beta, gamma=d1.gamma)
    xi2 = random_terminal(rng, tree)
    xi1 = xi2.copy()
    xi1[tree.leaves] += rng.random(tree.leaves.size)
    S2 = S1 = None
    if obstacle:
        S2 = rng.normal(size=tree.n_nodes)
        S2[tree.leaves] = xi2[tree.leaves] - rng.random(tree.leaves.size)
        S1 = S2 + rng.random(tree.n_nodes) * (rng.random() < 0.5)
        S1[tree.leaves] = np.minimum(S1[tree.leaves], xi1[tree.leaves])
    return ComparisonData(xi1, d1, S1), ComparisonData(xi2, d2, S2)


def test_identical_data_compare_equal(binary2, rng):
    drv = random_affine_driver(rng, binary2)
    xi = random_terminal(rng, binary2)
    sol = solve_bsde(binary2, xi, drv)
    data = ComparisonData(xi, drv)
    rep = comparison_check(binary2, data, data, sol, sol)
    assert rep.all_hold and rep.y_dominates


def test_shifted_terminal_dominates(binary2):
    drv = AffineDriver(binary2, gamma=[0.1, -0.1])
    xi = np.zeros(binary2.n_nodes)
    xi[binary2.leaves] = [1.0, 0.0, -1.0, 2.0]
    s1, s2 = solve_bsde(binary2, xi + 1, drv), solve_bsde(binary2, xi, drv)
    rep = comparison_check(binary2, ComparisonData(xi + 1, drv), ComparisonData(xi, drv), s1, s2)
    assert rep.all_hold and rep.y_dominates


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_comparison_on_generated_pairs(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    a, b = comparison_pair(rng, tree)
    s1 = solve_rbsde(tree, a.xi, a.driver, a.obstacle)
    s2 = solve_rbsde(tree, b.xi, b.driver, b.obstacle)
    rep = comparison_check(tree, a, b, s1, s2)
    assert rep.all_hold
    assert rep.y_dominates
