"""Reflected BSDEs: projection solver, penalization, optimal stopping, minimax."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bsde import (
    AffineDriver,
    BsdeSolution,
    ComparisonData,
    Driver,
    InfAffineDriver,
    PenalizedDriver,
    _terminal_array,
    comparison_check,
    one_step,
    solve_bsde,
)
from .errors import FamilyMemberInvalid, NonMonotone, ObstacleAboveTerminal, OracleTooLarge
from .tree import ScenarioTree, StoppingTime, decision_nodes, represent_increment

ORACLE_CAP = 20
HIT_TOL = 1e-12


@dataclass
class RbsdeSolution:
    """(Y, Z, K) with K_0 = 0; dK[n] = K_{t+1} - K_t is stored on the parent n."""

    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    dK: np.ndarray
    f: np.ndarray = field(repr=False)

    def residuals(self, tree: ScenarioTree, xi, driver: Driver, obstacle=None) -> dict[str, float]:
        """Worst violation of each solution invariant (all zero for an exact solution).

        The one-step identity is checked on positive-probability edges only.
        """
        xi = _terminal_array(tree, xi, tree.horizon)
        Y, Z, K, dK = self.Y, self.Z, self.K, self.dK
        identity = 0.0
        for n in range(tree.n_nodes):
            if tree.is_terminal(n):
                continue
            st = tree.stats(n)
            fn = driver(n, Y[n], Z[n])
            for i in st.support:
                c = tree.child_index[n, i]
                rhs = Y[c] + fn + dK[n] - (Z[n, i] - Z[n] @ st.p)
                identity = max(identity, abs(Y[n] - rhs))
                identity = max(identity, abs(K[c] - K[n] - dK[n]))
        out = {
            "identity": identity,
            "terminal": float(np.abs(Y[tree.leaves] - xi[tree.leaves]).max()),
            "k_start": abs(float(K[0])),
            "k_monotone": max(0.0, -float(dK.min())),
        }
        if obstacle is None:
            out["domination"] = 0.0
            out["complementarity"] = float(np.abs(dK).max())
        else:
            S = np.asarray(obstacle, dtype=float)
            out["domination"] = max(0.0, float((S - Y).max()))
            out["complementarity"] = float(np.abs((Y - S) * dK).max())
        return out


def _check_standard_data(tree, xi, obstacle, tol=1e-12):
    if obstacle is None:
        return
    S = np.asarray(obstacle, dtype=float)
    bad = [int(n) for n in tree.leaves if S[n] > xi[n] + tol * max(1.0, abs(xi[n]))]
    if bad:
        raise ObstacleAboveTerminal(
            f"obstacle exceeds terminal value at {len(bad)} leaves (S_T <= xi required)",
            node=tree.ids[bad[0]],
        )


def solve_rbsde(tree: ScenarioTree, xi, driver: Driver, obstacle=None) -> RbsdeSolution:
    """Solve the reflected equation by one-step projection Y_t = S_t v y_hat.

    ``obstacle=None`` means no lower barrier, which reduces to ``solve_bsde``.
    """
    xi = _terminal_array(tree, xi, tree.horizon)
    _check_standard_data(tree, xi, obstacle)
    S = None if obstacle is None else np.asarray(obstacle, dtype=float)
    n_nodes, m = tree.n_nodes, tree.state_count
    Y = np.zeros(n_nodes)
    Z = np.zeros((n_nodes, m))
    dK = np.zeros(n_nodes)
    F = np.zeros(n_nodes)
    Y[tree.leaves] = xi[tree.leaves]
    for node in reversed(range(n_nodes)):
        if tree.is_terminal(node):
            continue
        y_hat, z, cond = one_step(tree, node, Y, driver)
        Z[node] = z
        if S is None or y_hat >= S[node]:
            Y[node] = y_hat
        else:
            Y[node] = S[node]
            dK[node] = S[node] - driver(node, S[node], z) - cond
        F[node] = driver(node, Y[node], z)
    K = np.zeros(n_nodes)
    for c in range(1, n_nodes):
        K[c] = K[tree.parent[c]] + dK[tree.parent[c]]
    return RbsdeSolution(Y=Y, Z=Z, K=K, dK=dK, f=F)


# ------------------------------------------------------------ penalization
@dataclass
class PenalizationResult:
    ns: list
    solutions: list[BsdeSolution]
    dK: list[np.ndarray]  # n (Y^n - S)^- per node
    distances: np.ndarray  # sup over nodes |Y^n - Y|
    limit: RbsdeSolution
    monotone: bool


def solve_penalized(tree: ScenarioTree, xi, driver: Driver, obstacle, ns: Sequence[float] | None = None,
                    n_max: int | None = None, strict: bool = True, tol: float = 1e-10) -> PenalizationResult:
    """BSDEs with drivers f + n (y - S)^- for increasing n, against the reflected solution.

    ``ns`` defaults to 1, 2, 4, ..., n_max (n_max defaults to 2**14).
    """
    if ns is None:
        top = int(n_max or 2 ** 14)
        ns = [2 ** k for k in range(int(np.log2(top)) + 1)]
    ns = list(ns)
    xi_full = _terminal_array(tree, xi, tree.horizon)
    _check_standard_data(tree, xi_full, obstacle)
    S = np.asarray(obstacle, dtype=float)
    limit = solve_rbsde(tree, xi_full, driver, S)
    sols, dks, dist = [], [], []
    monotone = True
    prev = None
    for n in ns:
        sol = solve_bsde(tree, xi_full, PenalizedDriver(driver, S, n))
        sols.append(sol)
        dk = n * np.maximum(S - sol.Y, 0.0)
        dk[tree.leaves] = 0.0
        dks.append(dk)
        dist.append(float(np.abs(sol.Y - limit.Y).max()))
        if prev is not None:
            scale = tol * max(1.0, float(np.abs(sol.Y).max()))
            if np.any(sol.Y < prev - scale):
                monotone = False
                if strict:
                    worst = int(np.argmin(sol.Y - prev))
                    raise NonMonotone(f"Y^n decreased at n={n}", node=tree.ids[worst])
        prev = sol.Y
    return PenalizationResult(ns=ns, solutions=sols, dK=dks, distances=np.array(dist), limit=limit,
                              monotone=monotone)


# ------------------------------------------------------------ K formula
def k_increment_formula(tree: ScenarioTree, sol: RbsdeSolution, xi, driver: Driver, obstacle=None,
                        node: int = 0) -> float:
    """Max over positive-probability paths through ``node`` of
    | K_T - K_t - sup_{t<=u<=T} (xi + sum_{u<=s<T} f - sum_{u<=s<T} Z'M - S_u)^- |.
    """
    xi = _terminal_array(tree, xi, tree.horizon)
    worst = 0.0
    for leaf in tree.leaves_under(node):
        path = tree.path(leaf, node)
        if tree.cond_prob(leaf, node) == 0.0:
            continue
        if obstacle is None:
            worst = max(worst, abs(sol.K[leaf] - sol.K[node]))
            continue
        S = np.asarray(obstacle, dtype=float)
        tail = xi[leaf]  # xi + sum_{u<=s<T} (f - Z'M), accumulated backwards
        best = max(S[leaf] - tail, 0.0)
        for a, b in zip(path[-2::-1], path[:0:-1]):
            st = tree.stats(a)
            zm = sol.Z[a, tree.state[b]] - sol.Z[a] @ st.p
            tail += driver(a, sol.Y[a], sol.Z[a]) - zm
            best = max(best, S[a] - tail)
        worst = max(worst, abs(sol.K[leaf] - sol.K[node] - best))
    return worst


# ------------------------------------------------------------ optimal stopping
@dataclass
class StoppingResult:
    value: float
    rule: StoppingTime
    rule_value: float
    oracle_value: float | None
    n_rules: int | None
    skipped: str | None = None


def _stop_payoff(tree, xi, S, n):
    if tree.is_terminal(n):
        return xi[n]
    return -np.inf if S is None else S[n]


def _rule_value(tree, rule, xi, S, f, node):
    if rule.stop[node]:
        return _stop_payoff(tree, xi, S, node)
    st = tree.stats(node)
    return f[node] + sum(st.p[i] * _rule_value(tree, rule, xi, S, f, tree.child_index[node, i])
                         for i in st.support)


def _all_rule_values(tree, xi, S, f, node):
    """Value of every distinct stopping rule of the subtree (null branches collapsed)."""
    stop = _stop_payoff(tree, xi, S, node)
    if tree.is_terminal(node):
        return np.array([stop])
    st = tree.stats(node)
    acc = np.array([f[node]])
    for i in st.support:
        child = _all_rule_values(tree, xi, S, f, tree.child_index[node, i])
        acc = (acc[:, None] + st.p[i] * child[None, :]).ravel()
    if np.isfinite(stop):
        acc = np.concatenate([[stop], acc])
    return acc


def first_hitting_rule(tree: ScenarioTree, Y, obstacle, node: int = 0) -> StoppingTime:
    """D_t: stop at the first node of the subtree where Y = S (horizon if never)."""
    flags = np.zeros(tree.n_nodes, dtype=bool)
    if obstacle is not None:
        S = np.asarray(obstacle, dtype=float)
        Y = np.asarray(Y, dtype=float)
        for n in tree.subtree(node):
            flags[n] = Y[n] - S[n] <= HIT_TOL * max(1.0, abs(S[n]))
    return StoppingTime.from_flags(tree, flags)


def optimal_stopping(tree: ScenarioTree, sol: RbsdeSolution, xi, driver: Driver, obstacle=None,
                     node: int = 0, cap: int = ORACLE_CAP, oracle: bool = True,
                     strict: bool = False) -> StoppingResult:
    """Optimal stopping value at ``node`` with the first-hitting rule and a brute-force oracle.

    The oracle maximizes E[sum_{t<=s<theta} f(s, Y_s, Z_s) + S_theta 1{theta<T} + xi 1{theta=T}]
    over every stopping time of the subtree. It is skipped when the subtree has
    more than ``cap`` decision nodes (``strict=True`` raises OracleTooLarge).
    """
    xi = _terminal_array(tree, xi, tree.horizon)
    S = None if obstacle is None else np.asarray(obstacle, dtype=float)
    f = np.array([0.0 if tree.is_terminal(n) else driver(n, sol.Y[n], sol.Z[n]) for n in range(tree.n_nodes)])
    rule = first_hitting_rule(tree, sol.Y, S, node)
    rule_value = float(_rule_value(tree, rule, xi, S, f, node))
    oracle_value, n_rules, skipped = None, None, None
    if oracle:
        k = len(decision_nodes(tree, node))
        if k > cap:
            skipped = f"{k} decision nodes exceed the cap of {cap}"
            if strict:
                raise OracleTooLarge(skipped, node=tree.ids[node])
        else:
            vals = _all_rule_values(tree, xi, S, f, node)
            oracle_value = float(vals.max())
            n_rules = int(vals.size)
    return StoppingResult(value=float(sol.Y[node]), rule=rule, rule_value=rule_value,
                          oracle_value=oracle_value, n_rules=n_rules, skipped=skipped)


# ------------------------------------------------------------ minimax
@dataclass
class MinimaxResult:
    Y: np.ndarray
    solution: RbsdeSolution
    optimizers: np.ndarray  # member index per non-terminal node, -1 at leaves
    member_solutions: list[RbsdeSolution]
    selection_solution: RbsdeSolution
    selection_gap: float  # sup |Y - Y^{optimal selection}|
    exchange_residual: float  # sup |Y_t - opt_k (S_t v y_hat_k)|
    member_gap: float  # sup |Y - opt_k Y^k| over fixed members
    members_bound: bool  # Y <= every Y^k (inf) / Y >= every Y^k (sup)


def validate_member(tree: ScenarioTree, d: AffineDriver, tol: float = 1e-12) -> None:
    """|beta| < 1 and p + gamma >= 0 on the support with gamma a Q-vector, at every node."""
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        nid = tree.ids[n]
        if abs(d.beta[n]) >= 1.0:
            raise FamilyMemberInvalid(f"|beta| = {abs(d.beta[n])} >= 1", node=nid)
        g = d.gamma[n]
        p = tree.law[n]
        if abs(g.sum()) > 1e-10 or np.any(np.abs(g[p == 0]) > 1e-10):
            raise FamilyMemberInvalid("gamma is not a Q-vector", node=nid)
        if np.any((p + g)[p > 0] < -tol):
            raise FamilyMemberInvalid("gamma violates the comparison condition (p + gamma < 0)", node=nid)


def minimax_bounds(tree: ScenarioTree, xi, family: Sequence[AffineDriver], obstacle=None,
                   mode: str = "inf", tol: float = 1e-9) -> MinimaxResult:
    """Reflected solution for f = inf (or sup) over a finite affine family, with its
    control representation: optimal member per node, exchange of inf and v, and the
    comparison with every fixed member."""
    family = list(family)
    if not family:
        raise FamilyMemberInvalid("empty family")
    for d in family:
        validate_member(tree, d)
    drv = InfAffineDriver(family, mode)
    sol = solve_rbsde(tree, xi, drv, obstacle)
    members = [solve_rbsde(tree, xi, d, obstacle) for d in family]
    S = None if obstacle is None else np.asarray(obstacle, dtype=float)
    pick = np.argmin if mode == "inf" else np.argmax
    opt = np.min if mode == "inf" else np.max
    optim = np.full(tree.n_nodes, -1, dtype=int)
    exchange = 0.0
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        optim[n] = int(pick(drv.member_values(n, sol.Y[n], sol.Z[n])))
        cond = float(tree.law[n] @ tree.child_values(sol.Y, n))
        y_hats = np.array([d.solve_y(n, sol.Z[n], cond) for d in family])
        proj = y_hats if S is None else np.maximum(S[n], y_hats)
        exchange = max(exchange, abs(sol.Y[n] - opt(proj)))
    sel = np.where(optim < 0, 0, optim)
    chosen = AffineDriver(
        tree,
        alpha=np.array([family[k].alpha[n] for n, k in enumerate(sel)]),
        beta=np.array([family[k].beta[n] for n, k in enumerate(sel)]),
        gamma=np.array([family[k].gamma[n] for n, k in enumerate(sel)]),
    )
    sel_sol = solve_rbsde(tree, xi, chosen, obstacle)
    stack = np.array([s.Y for s in members])
    if mode == "inf":
        bound = bool(np.all(sol.Y <= stack.min(axis=0) + tol))
    else:
        bound = bool(np.all(sol.Y >= stack.max(axis=0) - tol))
    return MinimaxResult(
        Y=sol.Y,
        solution=sol,
        optimizers=optim,
        member_solutions=members,
        selection_solution=sel_sol,
        selection_gap=float(np.abs(sol.Y - sel_sol.Y).max()),
        exchange_residual=exchange,
        member_gap=float(np.abs(sol.Y - opt(stack, axis=0)).max()),
        members_bound=bound,
    )


# ------------------------------------------------------------ comparison counterexample
@dataclass
class Counterexample:
    tree: ScenarioTree
    data1: ComparisonData
    data2: ComparisonData
    sol1: RbsdeSolution
    sol2: RbsdeSolution
    report: object


def find_comparison_counterexample(probs=(0.3, 0.5, 0.7), scales=(0.25, 0.5, 1.0, 2.0),
                                   bumps=(0.5, 1.0, 2.0)) -> Counterexample | None:
    """Search one-step binary trees for data meeting every comparison hypothesis
    except the increment condition while Y^1_0 < Y^2_0.

    Both equations share a linear driver <gamma, z> with gamma = c (1, -1); the
    terminal values differ by a nonnegative bump on the second state and the
    obstacle is a common constant below both terminals.
    """
    from .tree import ScenarioTree as _T

    for p1 in probs:
        tree = _T.from_kernel(1, [p1, 1.0 - p1])
        for c in scales:
            drv = AffineDriver(tree, gamma=np.array([c, -c]))
            for d in bumps:
                xi2 = np.zeros(tree.n_nodes)
                xi1 = xi2.copy()
                xi1[tree.child_index[0, 1]] = d
                S = np.full(tree.n_nodes, -10.0)
                s1 = solve_rbsde(tree, xi1, drv, S)
                s2 = solve_rbsde(tree, xi2, drv, S)
                d1, d2 = ComparisonData(xi1, drv, S), ComparisonData(xi2, drv, S)
                rep = comparison_check(tree, d1, d2, s1, s2)
                h = rep.hypotheses
                if h["i"] and h["ii"] and h["iii"] and h["v"] and not h["iv"] and s1.Y[0] < s2.Y[0]:
                    return Counterexample(tree, d1, d2, s1, s2, rep)
    return None
