import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsde_lab.bsde import g_expectation, solve_bsde
from rbsde_lab.errors import InvalidTheta, KappaInadmissible, ScenarioNotAbsolutelyContinuous
from rbsde_lab.instances import random_q_vector, random_terminal, random_tree
from rbsde_lab.priors import (
    PriorFamily,
    ThetaSelection,
    kappa_driver,
    kappa_limit,
    measure_from_theta,
    paste,
    robust_expectation_oracle,
    robust_snell_oracle,
    scenario_driver,
    theta_moment,
)
from rbsde_lab.rbsde import solve_rbsde
from rbsde_lab.tree import ScenarioTree

TERN = [0.5, 0.25, 0.25]


def one_step(p):
    return ScenarioTree.from_kernel(1, p)


def selection(tree, rows):
    th = np.zeros((tree.n_nodes, tree.state_count))
    th[0] = rows
    return ThetaSelection.build(tree, th)


def random_selection(rng, tree):
    th = np.zeros((tree.n_nodes, tree.state_count))
    for n in range(tree.n_nodes):
        if not tree.is_terminal(n):
            th[n] = random_q_vector(rng, tree.law[n])
    return ThetaSelection.build(tree, th)


# --- measures
def test_reference_measure():
    tree = ScenarioTree.from_kernel(2, TERN)
    m = measure_from_theta(tree, ThetaSelection.zero(tree))
    assert np.allclose(m.density, 1.0)
    assert np.allclose(m.q[0], TERN)


def test_binary_density_factor():
    tree = one_step([0.5, 0.5])
    m = measure_from_theta(tree, selection(tree, [0.1, -0.1]))
    assert np.allclose(m.q[0], [0.6, 0.4])
    assert m.density[1] == pytest.approx(1.2)
    assert m.density_product_form[1] == pytest.approx(1.2)


def test_ternary_density():
    tree = one_step(TERN)
    m = measure_from_theta(tree, selection(tree, [0.1, -0.1, 0.0]))
    assert np.allclose(m.q[0], [0.6, 0.15, 0.25])
    assert m.expectation == pytest.approx(1.0, abs=1e-12)


def test_invalid_theta():
    tree = one_step([0.5, 0.5])
    with pytest.raises(InvalidTheta):
        selection(tree, [0.6, -0.6])
    with pytest.raises(InvalidTheta):
        selection(tree, [0.1, 0.1])
    tree = one_step([0.5, 0.5, 0.0])
    with pytest.raises(InvalidTheta):
        selection(tree, [0.1, -0.2, 0.1])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 100_000))
def test_random_selection_densities(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    sel = random_selection(rng, tree)
    m = measure_from_theta(tree, sel)
    assert abs(m.expectation - 1.0) < 1e-12
    assert m.form_gap < 1e-9  # pseudoinverse route loses digits when some p_i is tiny
    for n in range(tree.n_nodes):
        if not tree.is_terminal(n):
            assert np.abs(theta_moment(tree, n, m.q[n]) - sel.theta[n]).max() < 1e-12


def test_density_positivity_and_equivalence():
    tree = one_step([0.5, 0.5])
    m = measure_from_theta(tree, selection(tree, [0.5, -0.5]))  # q = (1, 0)
    assert m.density[2] == 0.0 and m.density[1] > 0
    m = measure_from_theta(tree, selection(tree, [0.2, -0.2]))
    assert np.all(m.density[tree.leaves] > 0)


# --- drivers
def test_kappa_driver_examples():
    tree = one_step([0.5, 0.5])
    d = kappa_driver(tree, 0.1, "M")
    assert d(0, 0.0, np.zeros(2)) == 0.0
    assert d(0, 0.0, np.array([1.0, -1.0])) == pytest.approx(-0.1)
    assert kappa_driver(tree, 0.1, "Mplus")(0, 0.0, np.array([1.0, -1.0])) == pytest.approx(-0.2)


def test_kappa_admissibility():
    tree = one_step([0.5, 0.5])
    assert kappa_limit(tree, 0, "M") == pytest.approx(1.0)
    assert kappa_limit(tree, 0, "Mplus") == pytest.approx(0.5)
    kappa_driver(tree, 1.0)
    with pytest.raises(KappaInadmissible):
        kappa_driver(tree, 1.01)
    with pytest.raises(KappaInadmissible):
        kappa_driver(tree, 0.6, "Mplus")
    with pytest.raises(KappaInadmissible):
        kappa_driver(tree, -0.1)


def test_scenario_driver_examples():
    tree = one_step([0.5, 0.5])
    assert scenario_driver(tree, 1.0, [])(0, 0.0, np.array([1.0, -1.0])) == 0.0
    d = scenario_driver(tree, 1.0, [[0.9, 0.1]])
    assert d(0, 0.0, np.array([1.0, -1.0])) == pytest.approx(0.0)
    assert d(0, 0.0, np.array([-1.0, 1.0])) == pytest.approx(-0.8)


def test_scenario_absolute_continuity():
    tree = one_step([1.0, 0.0])
    with pytest.raises(ScenarioNotAbsolutelyContinuous):
        scenario_driver(tree, 1.0, [[0.5, 0.5]])
    with pytest.raises(KappaInadmissible):
        scenario_driver(one_step([0.5, 0.5]), 1.5, [[0.5, 0.5]])


# --- oracle
def test_oracle_examples():
    tree = one_step([0.5, 0.5])
    xi = np.array([0.0, 2.0, 0.0])
    zero = PriorFamily("explicit", thetas={})
    assert robust_expectation_oracle(tree, xi, zero).value == pytest.approx(1.0)
    scen = PriorFamily("scenario", kappa=1.0, scenarios=[[0.25, 0.75]])
    assert robust_expectation_oracle(tree, xi, scen).value == pytest.approx(0.5)
    kap = PriorFamily("kappa", kappa=0.1, norm="M")
    orc = robust_expectation_oracle(tree, xi, kap)
    assert orc.exact and orc.value == pytest.approx(0.9)
    assert g_expectation(tree, xi, kap.driver(tree)) == pytest.approx(0.9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["inf", "sup"]))
def test_scenario_bsde_matches_exact_oracle(seed, mode):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    scen = {}
    for n in range(tree.n_nodes):
        if not tree.is_terminal(n):
            scen[tree.ids[n]] = [tree.law[n] + random_q_vector(rng, tree.law[n], 1.0) for _ in range(2)]
    fam = PriorFamily("scenario", kappa=float(rng.random()), scenarios=scen)
    xi = random_terminal(rng, tree)
    y = solve_bsde(tree, xi, fam.driver(tree, mode)).Y[0]
    assert abs(y - robust_expectation_oracle(tree, xi, fam, mode=mode).value) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["M", "Mplus"]), st.sampled_from(["inf", "sup"]))
def test_kappa_bsde_within_oracle_gap(seed, norm, mode):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    lim = min(kappa_limit(tree, n, norm) for n in range(tree.n_nodes) if not tree.is_terminal(n))
    fam = PriorFamily("kappa", kappa=min(0.9 * lim, 0.4), norm=norm)
    xi = random_terminal(rng, tree)
    y = solve_bsde(tree, xi, fam.driver(tree, mode)).Y[0]
    orc = robust_expectation_oracle(tree, xi, fam, mode=mode)
    assert abs(y - orc.value) <= orc.gap + 1e-9
    if orc.exact:
        assert abs(y - orc.value) < 1e-9


def test_kappa_exact_in_dimension_one():
    tree = ScenarioTree.from_kernel(4, [0.3, 0.7])
    rng = np.random.default_rng(0)
    xi = random_terminal(rng, tree)
    fam = PriorFamily("kappa", kappa=0.3)
    orc = robust_expectation_oracle(tree, xi, fam)
    assert orc.exact and orc.gap == 0.0
    assert solve_bsde(tree, xi, fam.driver(tree)).Y[0] == pytest.approx(orc.value, abs=1e-12)


def test_kappa_gap_shrinks_with_directions():
    tree = ScenarioTree.from_kernel(2, TERN)
    xi = random_terminal(np.random.default_rng(1), tree)
    fam = PriorFamily("kappa", kappa=0.3)
    y = solve_bsde(tree, xi, fam.driver(tree)).Y[0]
    coarse = robust_expectation_oracle(tree, xi, fam, n_dirs=8)
    fine = robust_expectation_oracle(tree, xi, fam, n_dirs=512)
    assert fine.gap < coarse.gap
    assert abs(y - fine.value) <= fine.gap + 1e-12


def test_robust_snell_matches_rbsde(ternary2):
    fam = PriorFamily("scenario", kappa=1.0, scenarios=[[0.2, 0.4, 0.4]])
    U = np.linspace(-1, 1, ternary2.n_nodes) ** 2
    sol = solve_rbsde(ternary2, U, fam.driver(ternary2), U)
    assert sol.Y[0] == pytest.approx(robust_snell_oracle(ternary2, U, fam).value, abs=1e-12)


# --- time consistency
def test_pasting_stays_in_family(ternary2):
    thetas = {"r": [[0.1, -0.05, -0.05]], "r.1": [[-0.1, 0.05, 0.05]], "r.2": [[0.0, 0.1, -0.1]]}
    fam = PriorFamily("explicit", thetas=thetas)
    rng = np.random.default_rng(2)
    for _ in range(20):
        sels = []
        for _ in range(2):
            th = np.zeros((ternary2.n_nodes, 3))
            for n in range(ternary2.n_nodes):
                if not ternary2.is_terminal(n):
                    opts, _ = fam.options(ternary2, n)
                    th[n] = opts[rng.integers(len(opts))]
            sels.append(ThetaSelection.build(ternary2, th))
        for node in range(ternary2.n_nodes):
            assert fam.admits(ternary2, paste(ternary2, sels[0], sels[1], node))


def test_admits_kappa_ball():
    tree = one_step([0.5, 0.5])
    fam = PriorFamily("kappa", kappa=0.1)
    assert fam.admits(tree, selection(tree, [0.05, -0.05]))
    assert not fam.admits(tree, selection(tree, [0.2, -0.2]))


def test_family_from_json():
    f = PriorFamily.from_json({"kind": "kappa", "kappa": 0.1, "norm": "Mplus"})
    assert f.kind == "kappa" and f.norm == "Mplus"
    f = PriorFamily.from_json({"kind": "explicit", "thetas": {"r": [[0.1, -0.1]]}})
    tree = one_step([0.5, 0.5])
    opts, _ = f.options(tree, 0)
    assert len(opts) == 2 and np.allclose(opts[0], 0)
