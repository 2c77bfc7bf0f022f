"""Backward stochastic difference equations on scenario trees.

The solver runs the backward induction

    Z_t' M_{t+1} = Y_{t+1} - E[Y_{t+1} | F_t],   Y_t - f(t, Y_t, Z_t) = E[Y_{t+1} | F_t]

node by node. Drivers that are affine in ``y`` are solved in closed form,
anything else by bracketing and Brent's method.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DriverEquivalenceViolation,
    NotNormalised,
    RootNotBracketed,
    SolverError,
)
from .tree import ScenarioTree, represent_increment

ROOT_XTOL = 1e-12
MAX_DOUBLINGS = 200


# ------------------------------------------------------------------ drivers
class Driver:
    """Per-node generator f(node, y, z).

    Subclasses set the capability flags; ``solve_y`` returns the root of
    y - f(node, y, z) = target.
    """

    depends_on_y = True
    depends_on_z = True
    normalised = False
    respects_equivalence = True

    def __call__(self, node: int, y: float, z: np.ndarray) -> float:
        raise NotImplementedError

    def solve_y(self, node: int, z: np.ndarray, target: float) -> float:
        def g(y):
            return y - self(node, y, z) - target

        width = 1.0
        for _ in range(MAX_DOUBLINGS):
            lo, hi = target - width, target + width
            glo, ghi = g(lo), g(hi)
            if glo <= 0.0 <= ghi:
                break
            width *= 2.0
        else:
            raise RootNotBracketed(f"y - f(y, z) = {target} has no bracketed root", node=node)
        if glo == 0.0:
            return lo
        if ghi == 0.0:
            return hi
        return brentq(g, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)


class FunctionDriver(Driver):
    """Wraps an arbitrary callable ``fn(node, y, z)``."""

    def __init__(self, fn: Callable, *, depends_on_y=True, depends_on_z=True,
                 normalised=False, respects_equivalence=True):
        self.fn = fn
        self.depends_on_y = depends_on_y
        self.depends_on_z = depends_on_z
        self.normalised = normalised
        self.respects_equivalence = respects_equivalence

    def __call__(self, node, y, z):
        return float(self.fn(node, y, z))


class YLinearDriver(Driver):
    """f(node, y, z) = beta(node) * y + h(node, z), solved in closed form."""

    def y_coef(self, node: int) -> float:
        return 0.0

    def z_term(self, node: int, z: np.ndarray) -> float:
        raise NotImplementedError

    def __call__(self, node, y, z):
        return self.y_coef(node) * y + self.z_term(node, z)

    def solve_y(self, node, z, target):
        slope = 1.0 - self.y_coef(node)
        if slope <= 0.0:
            raise RootNotBracketed(f"y - f(y, z) has slope {slope} <= 0", node=node)
        return (target + self.z_term(node, z)) / slope


class ZeroDriver(YLinearDriver):
    depends_on_y = False
    depends_on_z = False
    normalised = True

    def z_term(self, node, z):
        return 0.0


def _per_node(tree: ScenarioTree, value, trailing=()) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    shape = (tree.n_nodes,) + tuple(trailing)
    if a.shape == shape:
        return a.copy()
    return np.broadcast_to(a, shape).copy()


class AffineDriver(YLinearDriver):
    """f = alpha + beta * y + <gamma, z>; each coefficient constant or per node."""

    def __init__(self, tree: ScenarioTree, alpha=0.0, beta=0.0, gamma=None):
        self.tree = tree
        self.alpha = _per_node(tree, alpha)
        self.beta = _per_node(tree, beta)
        m = tree.state_count
        self.gamma = _per_node(tree, np.zeros(m) if gamma is None else gamma, (m,))
        self.depends_on_y = bool(np.any(self.beta != 0))
        self.depends_on_z = bool(np.any(self.gamma != 0))
        self.normalised = bool(np.all(self.alpha == 0) and np.all(self.beta == 0))
        self.respects_equivalence = all(
            _is_q_vector(tree, n, self.gamma[n]) for n in range(tree.n_nodes) if not tree.is_terminal(n)
        )

    def y_coef(self, node):
        return float(self.beta[node])

    def z_term(self, node, z):
        return float(self.alpha[node] + self.gamma[node] @ z)


class InfAffineDriver(Driver):
    """Pointwise inf (``mode='inf'``) or sup of finitely many affine drivers.

    y - f is the max (resp. min) of increasing lines, so its root is the min
    (resp. max) of the member roots.
    """

    def __init__(self, members: Sequence[AffineDriver], mode: str = "inf"):
        if not members:
            raise SolverError("empty driver family")
        if mode not in ("inf", "sup"):
            raise ValueError(f"mode must be 'inf' or 'sup', got {mode!r}")
        self.members = list(members)
        self.mode = mode
        self._opt = min if mode == "inf" else max
        self.depends_on_y = any(d.depends_on_y for d in members)
        self.depends_on_z = any(d.depends_on_z for d in members)
        self.normalised = all(d.normalised for d in members)
        self.respects_equivalence = all(d.respects_equivalence for d in members)

    def member_values(self, node, y, z) -> np.ndarray:
        return np.array([d(node, y, z) for d in self.members])

    def __call__(self, node, y, z):
        return self._opt(d(node, y, z) for d in self.members)

    def solve_y(self, node, z, target):
        return self._opt(d.solve_y(node, z, target) for d in self.members)


class PenalizedDriver(Driver):
    """f_n(y, z) = f(y, z) + n * (y - S)^-."""

    def __init__(self, base: Driver, obstacle: np.ndarray, n: float):
        self.base = base
        self.obstacle = np.asarray(obstacle, dtype=float)
        self.n = float(n)
        self.depends_on_y = True
        self.depends_on_z = base.depends_on_z
        self.normalised = False
        self.respects_equivalence = base.respects_equivalence

    def __call__(self, node, y, z):
        return self.base(node, y, z) + self.n * max(self.obstacle[node] - y, 0.0)

    def solve_y(self, node, z, target):
        if not isinstance(self.base, YLinearDriver):
            return super().solve_y(node, z, target)
        beta = self.base.y_coef(node)
        h = self.base.z_term(node, z)
        s = self.obstacle[node]
        y = (target + h) / (1.0 - beta)
        if y >= s:
            return y
        return (target + h + self.n * s) / (1.0 - beta + self.n)


def _is_q_vector(tree, node, v, tol=1e-12) -> bool:
    p = tree.law[node]
    scale = max(1.0, float(np.abs(v).max()))
    return abs(v.sum()) <= tol * scale and bool(np.all(np.abs(v[p == 0]) <= tol * scale))


def audit_driver_equivalence(tree: ScenarioTree, driver: Driver, samples: int = 8,
                             seed: int = 0, tol: float = 1e-9) -> None:
    """Sampled check that f(y, z) = f(y, z') whenever z ~_M z'.

    z' is z shifted by a constant vector and bumped in off-support coordinates.
    Raises DriverEquivalenceViolation on the first mismatch.
    """
    rng = np.random.default_rng(seed)
    m = tree.state_count
    for node in range(tree.n_nodes):
        if tree.is_terminal(node):
            continue
        off = tree.law[node] == 0
        for _ in range(samples):
            y = rng.normal()
            z = rng.normal(size=m)
            z2 = z + rng.normal() + np.where(off, rng.normal(size=m), 0.0)
            a, b = driver(node, y, z), driver(node, y, z2)
            if abs(a - b) > tol * max(1.0, abs(a)):
                raise DriverEquivalenceViolation(
                    f"f differs on equivalent z: {a:.12g} vs {b:.12g}", node=tree.ids[node]
                )


# ------------------------------------------------------------------ solver
@dataclass
class BsdeSolution:
    """Y per node, Z per non-terminal node (zero rows at the horizon)."""

    Y: np.ndarray
    Z: np.ndarray
    horizon: int
    f: np.ndarray = field(default=None, repr=False)  # driver value at (Y, Z)

    @property
    def K(self) -> np.ndarray:
        return np.zeros_like(self.Y)


def _terminal_array(tree: ScenarioTree, terminal, horizon: int) -> np.ndarray:
    terminal = np.asarray(terminal, dtype=float)
    layer = tree.layers[horizon]
    if terminal.shape == (tree.n_nodes,):
        return terminal
    if terminal.shape == (layer.size,):
        out = np.full(tree.n_nodes, np.nan)
        out[layer] = terminal
        return out
    raise SolverError(
        f"terminal values must have shape ({tree.n_nodes},) or ({layer.size},), got {terminal.shape}"
    )


def one_step(tree: ScenarioTree, node: int, values, driver: Driver) -> tuple[float, np.ndarray, float]:
    """(y, Z, E[values_{t+1}]) for the one-step BSDE at ``node``."""
    st = tree.stats(node)
    cond = float(st.p @ tree.child_values(values, node))
    z = represent_increment(tree, values, node)
    return driver.solve_y(node, z, cond), z, cond


def solve_bsde(tree: ScenarioTree, terminal, driver: Driver, horizon: int | None = None,
               audit: bool = False) -> BsdeSolution:
    """Solve Y_t = Y_{t+1} + f(t, Y_t, Z_t) - Z_t' M_{t+1} backward from ``horizon``.

    ``terminal`` is a full node array (only the horizon layer is read) or the
    horizon layer in node order. Nodes below the horizon are left as NaN.
    """
    T = tree.horizon if horizon is None else int(horizon)
    if audit:
        audit_driver_equivalence(tree, driver)
    term = _terminal_array(tree, terminal, T)
    Y = np.full(tree.n_nodes, np.nan)
    Z = np.zeros((tree.n_nodes, tree.state_count))
    F = np.zeros(tree.n_nodes)
    Y[tree.layers[T]] = term[tree.layers[T]]
    for t in range(T - 1, -1, -1):
        for node in tree.layers[t]:
            y, z, _ = one_step(tree, node, Y, driver)
            Y[node], Z[node] = y, z
            F[node] = driver(node, y, z)
    return BsdeSolution(Y=Y, Z=Z, horizon=T, f=F)


def g_expectation(tree: ScenarioTree, xi, driver: Driver, node: int = 0, horizon: int | None = None) -> float:
    """Conditional g-expectation of ``xi`` at ``node``."""
    if not driver.normalised:
        raise NotNormalised("g-expectation needs a normalised driver (f(y, 0) = 0)")
    return float(solve_bsde(tree, xi, driver, horizon=horizon).Y[node])


def g_conditional(tree: ScenarioTree, xi, driver: Driver, horizon: int | None = None) -> np.ndarray:
    """G(xi | F_t) at every node up to ``horizon``."""
    if not driver.normalised:
        raise NotNormalised("g-expectation needs a normalised driver (f(y, 0) = 0)")
    return solve_bsde(tree, xi, driver, horizon=horizon).Y


# -------------------------------------------------------- one-step operators
# A one-step operator maps (tree, node, child values indexed by state) to a real.

def linear_operator(tree, node, child_values):
    return float(tree.law[node] @ child_values)


def measures_operator(measures: Sequence, mode: str = "inf"):
    """min (or max) of q . values over a fixed list of one-step laws q."""
    qs = np.asarray(measures, dtype=float)
    opt = np.min if mode == "inf" else np.max

    def op(tree, node, child_values):
        return float(opt(qs @ child_values))

    return op


def bsde_operator(driver: Driver):
    """One-step g-expectation of a driver, as a one-step operator."""

    def op(tree, node, child_values):
        full = np.zeros(tree.n_nodes)
        for i, c in enumerate(tree.child_index[node]):
            if c >= 0:
                full[c] = child_values[i]
        return one_step(tree, node, full, driver)[0]

    return op


def induced_driver(tree: ScenarioTree, G, node: int, z) -> float:
    """f(node, z) = G(z' M_{t+1} | F_t) for a one-step operator G."""
    st = tree.stats(node)
    z = np.asarray(z, dtype=float)
    payoff = z - z @ st.p
    return float(G(tree, node, payoff))


# ------------------------------------------------------------- Doob-Meyer
@dataclass
class DoobMeyer:
    K: np.ndarray
    increments: np.ndarray  # K_{t+1} - K_t stored on the parent node
    direction: str  # increasing | decreasing | constant | neither
    martingale_residual: float


def doob_meyer(tree: ScenarioTree, X, driver: Driver, tol: float = 1e-12) -> DoobMeyer:
    """Predictable K with K_0 = 0 making X + K a g-martingale.

    K_{t+1} = K_t + X_t - G(X_{t+1} | F_t), so K increases for a
    g-supermartingale and decreases for a g-submartingale.
    """
    if not driver.normalised:
        raise NotNormalised("Doob-Meyer decomposition needs a normalised driver")
    X = np.asarray(X, dtype=float)
    K = np.zeros(tree.n_nodes)
    dK = np.zeros(tree.n_nodes)
    for node in range(tree.n_nodes):
        if tree.is_terminal(node):
            continue
        g, _, _ = one_step(tree, node, X, driver)
        dK[node] = X[node] - g
        for c in tree.children(node):
            K[c] = K[node] + dK[node]
    XK = X + K
    resid = 0.0
    for node in range(tree.n_nodes):
        if not tree.is_terminal(node):
            g, _, _ = one_step(tree, node, XK, driver)
            resid = max(resid, abs(g - XK[node]))
    inner = dK[[n for n in range(tree.n_nodes) if not tree.is_terminal(n)]]
    scale = tol * max(1.0, float(np.abs(X).max()))
    if np.all(np.abs(inner) <= scale):
        direction = "constant"
    elif np.all(inner >= -scale):
        direction = "increasing"
    elif np.all(inner <= scale):
        direction = "decreasing"
    else:
        direction = "neither"
    return DoobMeyer(K=K, increments=dK, direction=direction, martingale_residual=resid)


# ------------------------------------------------------------- comparison
@dataclass
class ComparisonData:
    xi: np.ndarray
    driver: Driver
    obstacle: np.ndarray | None = None


@dataclass
class ComparisonReport:
    terminal_ok: np.ndarray  # xi1 >= xi2, per leaf
    driver_ok: np.ndarray  # f1 >= f2 along Y2, per non-terminal node
    obstacle_ok: np.ndarray  # S1 >= S2, per node
    increment_ok: np.ndarray  # f1(Z1) - f1(Z2) >= min_i (Z1 - Z2) . (e_i - p), per non-terminal node
    monotone_ok: np.ndarray  # y - f1(y, Z1) strictly increasing, per non-terminal node
    y_dominates: bool
    k_decreasing: bool
    nodes: np.ndarray = field(repr=False)

    @property
    def hypotheses(self) -> dict[str, bool]:
        return {
            "i": bool(self.terminal_ok.all()),
            "ii": bool(self.driver_ok.all()),
            "iii": bool(self.obstacle_ok.all()),
            "iv": bool(self.increment_ok.all()),
            "v": bool(self.monotone_ok.all()),
        }

    @property
    def all_hold(self) -> bool:
        return all(self.hypotheses.values())


def comparison_check(tree: ScenarioTree, data1: ComparisonData, data2: ComparisonData,
                     sol1, sol2, tol: float = 1e-9) -> ComparisonReport:
    """Check the comparison hypotheses node by node and the conclusion Y1 >= Y2.

    ``sol1``/``sol2`` need ``Y`` and ``Z``; a ``K`` attribute enables the
    check that K1 - K2 is nonincreasing while the Y's agree.
    """
    f1, f2 = data1.driver, data2.driver
    Y1, Y2, Z1, Z2 = sol1.Y, sol2.Y, sol1.Z, sol2.Z
    inner = np.array([n for n in range(tree.n_nodes) if not tree.is_terminal(n)], dtype=int)
    leaves = tree.leaves
    xi1 = np.asarray(data1.xi, dtype=float)
    xi2 = np.asarray(data2.xi, dtype=float)
    terminal_ok = xi1[leaves] >= xi2[leaves] - tol
    if data1.obstacle is None and data2.obstacle is None:
        obstacle_ok = np.ones(tree.n_nodes, dtype=bool)
    elif data2.obstacle is None:
        obstacle_ok = np.ones(tree.n_nodes, dtype=bool)
    elif data1.obstacle is None:
        obstacle_ok = np.zeros(tree.n_nodes, dtype=bool)
    else:
        obstacle_ok = np.asarray(data1.obstacle) >= np.asarray(data2.obstacle) - tol
    driver_ok = np.zeros(inner.size, dtype=bool)
    increment_ok = np.zeros(inner.size, dtype=bool)
    monotone_ok = np.zeros(inner.size, dtype=bool)
    for k, n in enumerate(inner):
        st = tree.stats(n)
        y2 = Y2[n]
        driver_ok[k] = f1(n, y2, Z2[n]) >= f2(n, y2, Z2[n]) - tol
        dz = Z1[n] - Z2[n]
        rhs = min(dz[i] - dz @ st.p for i in st.support)
        increment_ok[k] = f1(n, y2, Z1[n]) - f1(n, y2, Z2[n]) >= rhs - tol
        lhs1 = Y1[n] - f1(n, Y1[n], Z1[n])
        lhs2 = Y2[n] - f1(n, Y2[n], Z1[n])
        literal = (lhs1 < lhs2 - tol) or (Y1[n] >= Y2[n] - tol)
        lo, hi = min(Y1[n], Y2[n]) - 1.0, max(Y1[n], Y2[n]) + 1.0
        grid = np.linspace(lo, hi, 9)
        vals = [y - f1(n, y, Z1[n]) for y in grid]
        strict = all(b > a for a, b in zip(vals[:-1], vals[1:]))
        monotone_ok[k] = literal and strict
    y_dominates = bool(np.all(Y1 >= Y2 - tol))
    k_decreasing = True
    K1 = getattr(sol1, "K", None)
    K2 = getattr(sol2, "K", None)
    if K1 is not None and K2 is not None:
        for leaf in leaves:
            path = tree.path(int(leaf))
            agree = 0
            while agree < len(path) and abs(Y1[path[agree]] - Y2[path[agree]]) <= tol:
                agree += 1
            if agree == 0:
                continue
            upto = min(agree, len(path) - 1)  # times 0 .. (t+1) ^ T
            diff = [K1[path[s]] - K2[path[s]] for s in range(upto + 1)]
            if any(d > tol for d in diff) or any(b > a + tol for a, b in zip(diff[:-1], diff[1:])):
                k_decreasing = False
    return ComparisonReport(
        terminal_ok=terminal_ok,
        driver_ok=driver_ok,
        obstacle_ok=obstacle_ok,
        increment_ok=increment_ok,
        monotone_ok=monotone_ok,
        y_dominates=y_dominates,
        k_decreasing=k_decreasing,
        nodes=inner,
    )


def is_g_supermartingale(tree: ScenarioTree, X, driver: Driver, tol: float = 1e-9) -> bool:
    """X_t >= G(X_{t+1} | F_t) at every non-terminal node."""
    X = np.asarray(X, dtype=float)
    for node in range(tree.n_nodes):
        if tree.is_terminal(node):
            continue
        g, _, _ = one_step(tree, node, X, driver)
        if X[node] < g - tol:
            return False
    return True
