"""Acceptance checks, one function per criterion.

Each check returns ``Check(passed, detail)``; nothing here loosens a
tolerance to make a check pass. Used by tests/test_acceptance.py and
scripts/run_acceptance.py.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .bsde import (
    AffineDriver,
    ComparisonData,
    comparison_check,
    doob_meyer,
    g_conditional,
    one_step,
    solve_bsde,
)
from .experiments import ambiguity_demo
from .instances import (
    InstanceConfig,
    random_affine_driver,
    random_q_vector,
    random_rbsde_instance,
    random_terminal,
    random_tree,
)
from .market import (
    MarketSpec,
    build_market,
    claim_payoff,
    crr_oracle,
    fixed_selection_price,
    price_american_bounds,
    price_european_bounds,
    recover_strategy,
)
from .priors import (
    PriorFamily,
    ThetaSelection,
    kappa_driver,
    kappa_limit,
    measure_from_theta,
    robust_expectation_oracle,
    scenario_driver,
    theta_moment,
)
from .rbsde import (
    find_comparison_counterexample,
    k_increment_formula,
    optimal_stopping,
    solve_penalized,
    solve_rbsde,
)
from .skorohod import SkorohodSolution, solve_skorohod
from .tree import ScenarioTree, enumerate_stopping_times

TOL = 1e-9


@dataclass
class Check:
    passed: bool
    detail: str


# ------------------------------------------------------------ 1: Skorohod
def skorohod_suite(n: int = 1000, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    bad_inv = bad_form = unbroken = 0
    for _ in range(n):
        T = int(rng.integers(0, 13))
        y = [int(v) for v in rng.integers(-20, 21, size=T + 1)]
        y[0] = abs(y[0])
        s = solve_skorohod(y)
        if s.violations(y):
            bad_inv += 1
        if any(s.g[t] != max(max(-v, 0) for v in y[: t + 1]) for t in range(len(y))):
            bad_form += 1
        g = list(s.g)
        g[int(rng.integers(len(y)))] += int(rng.choice([-1, 1]))
        v = [a + b for a, b in zip(y, g)]
        if not SkorohodSolution(tuple(v), tuple(g)).violations(y):
            unbroken += 1
    ok = bad_inv == bad_form == unbroken == 0
    return Check(ok, f"{n} sequences: invariant failures {bad_inv}, closed-form mismatches {bad_form}, "
                     f"perturbations not detected {unbroken}")


# ------------------------------------------------------------ 2, 3: RBSDE and penalization
def rbsde_validity(n: int = 500) -> Check:
    worst_res = worst_k = 0.0
    for seed in range(n):
        inst = random_rbsde_instance(seed)
        sol = solve_rbsde(inst.tree, inst.xi, inst.driver, inst.obstacle)
        res = sol.residuals(inst.tree, inst.xi, inst.driver, inst.obstacle)
        worst_res = max(worst_res, max(res.values()))
        worst_k = max(worst_k, k_increment_formula(inst.tree, sol, inst.xi, inst.driver, inst.obstacle))
    ok = worst_res < TOL and worst_k < TOL
    return Check(ok, f"{n} instances: max invariant residual {worst_res:.2e}, max K-formula discrepancy {worst_k:.2e}")


def penalization(n: int = 500, log2_max: int = 14, tol: float = 1e-6) -> Check:
    ns = [2 ** k for k in range(log2_max + 1)]
    nonmono = 0
    worst = 0.0
    for seed in range(n):
        inst = random_rbsde_instance(seed)
        pen = solve_penalized(inst.tree, inst.xi, inst.driver, inst.obstacle, ns=ns, strict=False)
        nonmono += not pen.monotone
        worst = max(worst, float(pen.distances[-1]))
    ok = nonmono == 0 and worst < tol
    return Check(ok, f"{n} instances: non-monotone {nonmono}, max sup|Y^(2^{log2_max}) - Y| = {worst:.2e} "
                     f"(required < {tol:.0e})")


# ------------------------------------------------------------ 4: comparison
def comparison_pair(rng, tree):
    """Pair of RBSDE data meeting every comparison hypothesis."""
    d1 = random_affine_driver(rng, tree)
    d2 = AffineDriver(tree, alpha=d1.alpha - rng.random(tree.n_nodes), beta=d1.beta, gamma=d1.gamma)
    xi2 = random_terminal(rng, tree)
    xi1 = xi2.copy()
    xi1[tree.leaves] += rng.random(tree.leaves.size)
    S2 = rng.normal(size=tree.n_nodes)
    S2[tree.leaves] = xi2[tree.leaves] - rng.random(tree.leaves.size)
    S1 = S2 + rng.random(tree.n_nodes) * (rng.random() < 0.5)
    S1[tree.leaves] = np.minimum(S1[tree.leaves], xi1[tree.leaves])
    return ComparisonData(xi1, d1, S1), ComparisonData(xi2, d2, S2)


def comparison(n: int = 500, seed: int = 4) -> Check:
    rng = np.random.default_rng(seed)
    hyp_fail = dom_fail = 0
    for _ in range(n):
        tree = random_tree(rng)
        a, b = comparison_pair(rng, tree)
        s1 = solve_rbsde(tree, a.xi, a.driver, a.obstacle)
        s2 = solve_rbsde(tree, b.xi, b.driver, b.obstacle)
        rep = comparison_check(tree, a, b, s1, s2)
        hyp_fail += not rep.all_hold
        dom_fail += not rep.y_dominates
    ce = find_comparison_counterexample()
    ce_ok = False
    if ce is not None:
        h = ce.report.hypotheses
        ce_ok = (not h["iv"]) and all(v for k, v in h.items() if k != "iv") and ce.sol1.Y[0] < ce.sol2.Y[0]
    ok = hyp_fail == 0 and dom_fail == 0 and ce_ok
    ce_txt = "none found" if ce is None else f"Y1_0 = {ce.sol1.Y[0]:.6f} < Y2_0 = {ce.sol2.Y[0]:.6f}"
    return Check(ok, f"{n} pairs: hypothesis failures {hyp_fail}, domination failures {dom_fail}; "
                     f"counterexample without the increment condition: {ce_txt}")


# ------------------------------------------------------------ 5: optimal stopping
def optimal_stopping_check(n: int = 500) -> Check:
    checked = 0
    worst_oracle = worst_rule = 0.0
    for seed in range(n):
        inst = random_rbsde_instance(seed)
        sol = solve_rbsde(inst.tree, inst.xi, inst.driver, inst.obstacle)
        res = optimal_stopping(inst.tree, sol, inst.xi, inst.driver, inst.obstacle)
        worst_rule = max(worst_rule, abs(res.rule_value - res.value))
        if res.oracle_value is not None:
            checked += 1
            worst_oracle = max(worst_oracle, abs(res.oracle_value - res.value))
    ok = checked > 0 and worst_oracle < TOL and worst_rule < TOL
    return Check(ok, f"{checked}/{n} trees within the 20-decision-node cap: max |Y_0 - enumeration| "
                     f"{worst_oracle:.2e}; first-hitting rule gap {worst_rule:.2e} on all {n}")


# ------------------------------------------------------------ 6: g-expectations
def axiom_failures(tree, drv, rng, tol=TOL) -> list[str]:
    """Monotonicity, constants, translation, tower and local property of the g-expectation."""
    fails = []
    xi = random_terminal(rng, tree)
    Y = g_conditional(tree, xi, drv)
    bump = np.zeros(tree.n_nodes)
    bump[tree.leaves] = rng.random(tree.leaves.size)
    if np.any(g_conditional(tree, xi + bump, drv) < Y - tol):
        fails.append("monotone")
    for t in range(tree.horizon):
        layer = tree.layers[t]
        eta = rng.normal(size=tree.n_nodes)
        at_t = np.array([eta[tree.ancestor_at(n, t)] for n in range(tree.n_nodes)])
        if np.abs(g_conditional(tree, at_t, drv)[layer] - eta[layer]).max() > tol:
            fails.append("constants")
        if np.abs(g_conditional(tree, xi + at_t, drv)[layer] - Y[layer] - eta[layer]).max() > tol:
            fails.append("translation")
        upto = layer.max() + 1
        if np.abs(g_conditional(tree, Y, drv, horizon=t)[:upto] - Y[:upto]).max() > tol:
            fails.append("tower")
        a = int(rng.choice(layer))
        ind = np.array([1.0 if tree.ancestor_at(n, t) == a else 0.0 for n in range(tree.n_nodes)])
        if np.abs(g_conditional(tree, ind * xi, drv)[layer] - ind[layer] * Y[layer]).max() > tol:
            fails.append("local")
    return fails


def random_kappa_driver(rng, tree, norm="M"):
    lim = min(kappa_limit(tree, n, norm) for n in range(tree.n_nodes) if not tree.is_terminal(n))
    return kappa_driver(tree, min(0.9 * lim, 0.5) * rng.random(), norm)


def random_scenarios(rng, tree, k=2):
    scen = {}
    for n in range(tree.n_nodes):
        if not tree.is_terminal(n):
            scen[tree.ids[n]] = [tree.law[n] + random_q_vector(rng, tree.law[n], 1.0) for _ in range(k)]
    return scen


def g_supermartingale(tree, drv, rng):
    X = np.zeros(tree.n_nodes)
    X[tree.leaves] = rng.normal(size=tree.leaves.size)
    for n in reversed(range(tree.n_nodes)):
        if not tree.is_terminal(n):
            X[n] = one_step(tree, n, X, drv)[0] + rng.random()
    return X


def optional_sampling_failures(tree, X, drv, tol=TOL) -> tuple[int, int]:
    """Check X_sigma >= G(X_tau | F_sigma) for every pair sigma <= tau; returns (failures, pairs)."""
    taus = list(enumerate_stopping_times(tree))
    leaves = [int(lf) for lf in tree.leaves]
    stop = [[tau.stopping_node(tree, lf) for lf in leaves] for tau in taus]
    fails = pairs = 0
    for j, tau in enumerate(taus):
        xi = np.zeros(tree.n_nodes)
        for k, lf in enumerate(leaves):
            xi[lf] = X[stop[j][k]]
        Y = g_conditional(tree, xi, drv)
        for i in range(len(taus)):
            if any(tree.time[stop[i][k]] > tree.time[stop[j][k]] for k in range(len(leaves))):
                continue
            pairs += 1
            fails += any(X[s] < Y[s] - tol for s in stop[i])
    return fails, pairs


def g_expectation_check(n: int = 200, seed: int = 6) -> Check:
    rng = np.random.default_rng(seed)
    fails = {"kappa": 0, "scenario": 0}
    dm_bad = 0
    for _ in range(n):
        tree = random_tree(rng)
        kd = random_kappa_driver(rng, tree, str(rng.choice(["M", "Mplus"])))
        sd = scenario_driver(tree, float(rng.random()), random_scenarios(rng, tree))
        fails["kappa"] += bool(axiom_failures(tree, kd, rng))
        fails["scenario"] += bool(axiom_failures(tree, sd, rng))
        for drv in (kd, sd):
            sup = g_supermartingale(tree, drv, rng)
            for X, want in ((sup, "increasing"), (-g_supermartingale(tree, kd, rng), None)):
                dm = doob_meyer(tree, X, drv)
                predictable = all(dm.K[c] == dm.K[tree.parent[c]] + dm.increments[tree.parent[c]]
                                  for c in range(1, tree.n_nodes))
                right_dir = want is None or dm.direction in (want, "constant")
                dm_bad += not (predictable and right_dir and dm.martingale_residual < TOL)
    # optional sampling on every tree shape with at most 15 nodes used here
    small = [ScenarioTree.from_kernel(2, [0.5, 0.5]), ScenarioTree.from_kernel(3, [0.3, 0.7]),
             ScenarioTree.from_kernel(2, [0.5, 0.25, 0.25]), ScenarioTree.from_kernel(2, [0.6, 0.0, 0.4])]
    cfg = InstanceConfig(max_nodes=15)
    while len(small) < 12:
        t = random_tree(rng, cfg)
        if t.n_nodes <= 15:
            small.append(t)
    os_fail = os_pairs = 0
    for tree in small:
        for drv in (random_kappa_driver(rng, tree), scenario_driver(tree, 0.5, random_scenarios(rng, tree))):
            f, p = optional_sampling_failures(tree, g_supermartingale(tree, drv, rng), drv)
            os_fail += f
            os_pairs += p
    ok = fails["kappa"] == fails["scenario"] == dm_bad == os_fail == 0
    return Check(ok, f"{n} instances: axiom failures kappa {fails['kappa']}, scenario {fails['scenario']}; "
                     f"Doob-Meyer failures {dm_bad}; optional sampling {os_fail} failures over {os_pairs} pairs "
                     f"on {len(small)} trees")


# ------------------------------------------------------------ 7: priors
def priors_check(n: int = 200, seed: int = 7) -> Check:
    rng = np.random.default_rng(seed)
    w_err = th_err = 0.0
    for _ in range(n):
        tree = random_tree(rng)
        th = np.zeros((tree.n_nodes, tree.state_count))
        for v in range(tree.n_nodes):
            if not tree.is_terminal(v):
                th[v] = random_q_vector(rng, tree.law[v])
        sel = ThetaSelection.build(tree, th)
        m = measure_from_theta(tree, sel)
        w_err = max(w_err, abs(m.expectation - 1.0))
        for v in range(tree.n_nodes):
            if not tree.is_terminal(v):
                th_err = max(th_err, float(np.abs(theta_moment(tree, v, m.q[v]) - sel.theta[v]).max()))
    scen_err = kap_excess = exact_err = 0.0
    n_exact = 0
    for k in range(n):
        tree = random_tree(rng)
        xi = random_terminal(rng, tree)
        mode = ("inf", "sup")[k % 2]
        fam = PriorFamily("scenario", kappa=float(rng.random()), scenarios=random_scenarios(rng, tree))
        y = solve_bsde(tree, xi, fam.driver(tree, mode)).Y[0]
        scen_err = max(scen_err, abs(y - robust_expectation_oracle(tree, xi, fam, mode=mode).value))
        if k % 4 == 0:
            norm = ("M", "Mplus")[(k // 4) % 2]
            lim = min(kappa_limit(tree, v, norm) for v in range(tree.n_nodes) if not tree.is_terminal(v))
            fam = PriorFamily("kappa", kappa=min(0.9 * lim, 0.4), norm=norm)
            y = solve_bsde(tree, xi, fam.driver(tree, mode)).Y[0]
            orc = robust_expectation_oracle(tree, xi, fam, mode=mode)
            kap_excess = max(kap_excess, abs(y - orc.value) - orc.gap)
            if orc.exact:
                n_exact += 1
                exact_err = max(exact_err, abs(y - orc.value))
    for T, p in ((3, [0.3, 0.7]), (4, [0.5, 0.5]), (2, [0.6, 0.0, 0.4])):
        tree = ScenarioTree.from_kernel(T, p)
        xi = random_terminal(rng, tree)
        fam = PriorFamily("kappa", kappa=0.9 * kappa_limit(tree, 0))
        orc = robust_expectation_oracle(tree, xi, fam)
        n_exact += orc.exact
        exact_err = max(exact_err, abs(solve_bsde(tree, xi, fam.driver(tree)).Y[0] - orc.value))
    ok = w_err < 1e-12 and th_err < 1e-12 and scen_err < TOL and kap_excess <= TOL and exact_err < TOL
    return Check(ok, f"{n} selections: |E_P[W_T] - 1| {w_err:.1e}, |E_Q[M] - theta| {th_err:.1e}; "
                     f"scenario BSDE vs oracle {scen_err:.1e}; kappa excess over gap {kap_excess:.1e}; "
                     f"dimension-one exact cases {n_exact}, max error {exact_err:.1e}")


# ------------------------------------------------------------ 8: pricing
def pricing_check() -> Check:
    spec = MarketSpec(r=0.0, b=0.05, sigma=[0.2, -0.2], S0=100.0)
    m1 = build_market(ScenarioTree.from_kernel(1, [0.5, 0.5]), spec)
    u, d = m1.prices[1, 0] / 100.0, m1.prices[2, 0] / 100.0
    q = 0.5 + m1.vertices[0][0][0]
    eb = price_european_bounds(m1, claim_payoff(m1, "call", 100.0))
    call_ok = abs(eb.sub.Y[0] - 9.375) < 1e-10 and abs(eb.super.Y[0] - 9.375) < 1e-10
    m2 = build_market(ScenarioTree.from_kernel(2, [0.5, 0.5]), spec)
    put = claim_payoff(m2, "put", 100.0)
    ab = price_american_bounds(m2, put)
    crr = crr_oracle(m2, put, american=True)[0]
    put_ok = abs(ab.super.Y[0] - crr) < 1e-10 and abs(ab.sub.Y[0] - crr) < 1e-10
    # ternary incomplete market: every fixed vertex selection against the bounds
    m3 = build_market(ScenarioTree.from_kernel(2, [0.5, 0.25, 0.25]),
                      MarketSpec(r=0.0, b=0.0, sigma=[0.2, 0.0, -0.2], S0=100.0))
    inner = sorted(m3.vertices)
    bracket_fail = 0
    n_sel = 0
    eb3 = price_european_bounds(m3, claim_payoff(m3, "call", 100.0))
    ab3 = price_american_bounds(m3, claim_payoff(m3, "put", 100.0))
    for choice in itertools.product(*(range(len(m3.vertices[v])) for v in inner)):
        sel = np.zeros(m3.tree.n_nodes, dtype=int)
        sel[inner] = choice
        n_sel += 1
        Yc = fixed_selection_price(m3, claim_payoff(m3, "call", 100.0), sel, american=False)
        Yp = fixed_selection_price(m3, claim_payoff(m3, "put", 100.0), sel, american=True)
        bracket_fail += bool(np.any(eb3.sub.Y > Yc + 1e-10) or np.any(Yc > eb3.super.Y + 1e-10))
        bracket_fail += bool(np.any(ab3.sub.Y > Yp + 1e-10) or np.any(Yp > ab3.super.Y + 1e-10))
    strat_res = 0.0
    n_ok = 0
    for sol in (eb3.super, ab3.super):
        rep = recover_strategy(m3, sol)
        n_ok += sum(s == "ok" for s in rep.status)
        strat_res = max(strat_res, rep.max_residual())
    ok = call_ok and put_ok and bracket_fail == 0 and strat_res < TOL and n_ok > 0
    return Check(ok, f"binomial u={u:.4g} d={d:.4g} q={q:.4g}: call sub {eb.sub.Y[0]:.12g} super {eb.super.Y[0]:.12g}; "
                     f"American put {ab.super.Y[0]:.12g} vs crr {crr:.12g}; ternary: {n_sel} vertex selections, "
                     f"bracket failures {bracket_fail}, strategy residual {strat_res:.1e} at {n_ok} identifiable nodes")


# ------------------------------------------------------------ 9: ambiguity demo
def ambiguity_demo_check(horizon: int = 4, mu: float = 0.05, sigma=(0.2, -0.2)) -> Check:
    t0 = time.perf_counter()
    plain = ambiguity_demo(horizon, mu, sigma, kappa=0.0)
    t1 = time.perf_counter()
    amb = ambiguity_demo(horizon, mu, sigma, kappa="auto")
    t2 = time.perf_counter()
    ok = (plain.tau_plain == horizon and amb.worst_drift < 0 and amb.tau_ambiguous == 0
          and t1 - t0 < 1.0 and t2 - t1 < 1.0)
    return Check(ok, f"kappa=0: tau*={plain.tau_plain} (T={horizon}) in {t1 - t0:.3f}s; derived kappa={amb.kappa:.4g} "
                     f"(worst drift {amb.worst_drift:.3g}): tau*={amb.tau_ambiguous} in {t2 - t1:.3f}s")


CRITERIA = [
    ("1 Skorohod", skorohod_suite),
    ("2 RBSDE validity", rbsde_validity),
    ("3 penalization", penalization),
    ("4 comparison", comparison),
    ("5 optimal stopping", optimal_stopping_check),
    ("6 g-expectation", g_expectation_check),
    ("7 priors", priors_check),
    ("8 pricing", pricing_check),
    ("9 ambiguity demo", ambiguity_demo_check),
]
