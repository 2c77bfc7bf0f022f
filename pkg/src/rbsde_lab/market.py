"""Bond-plus-stocks market on a scenario tree and sub/superreplication pricing.

Asset i moves as S_{t+1} = S_t (1 + b_i + sigma_i . M_{t+1}). Risk premia theta
are Q-vectors with sigma theta = r 1 - b and 0 <= p + theta <= 1; each one is
a martingale measure q = p + theta for the discounted prices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .bsde import AffineDriver, BsdeSolution, YLinearDriver, _terminal_array, solve_bsde
from .errors import EmptyPolytope, NegativePrice, NotComplete, SolverError
from .rbsde import RbsdeSolution, first_hitting_rule, solve_rbsde
from .tree import ScenarioTree, StoppingTime

VERTEX_DIM_MAX = 4
MART_TOL = 1e-10
FEAS_TOL = 1e-12


@dataclass
class MarketSpec:
    """r: scalar or per node; b: (k,) or (N, k); sigma: (k, m) or (N, k, m); S0: (k,)."""

    r: object
    b: object
    sigma: object
    S0: object

    def arrays(self, tree: ScenarioTree):
        S0 = np.atleast_1d(np.asarray(self.S0, dtype=float))
        k, m, n = S0.size, tree.state_count, tree.n_nodes
        r = np.broadcast_to(np.asarray(self.r, dtype=float), (n,)).copy()
        b = np.asarray(self.b, dtype=float)
        b = np.broadcast_to(b.reshape(b.shape if b.ndim == 2 else (k,)), (n, k)).copy()
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim == 1:
            sig = sig[None, :]
        sig = np.broadcast_to(sig, (n, k, m)).copy()
        return r, b, sig, S0


@dataclass
class Market:
    tree: ScenarioTree
    r: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    prices: np.ndarray  # (N, k)
    discount: np.ndarray  # prod_{s<t} 1/(1 + r_s) per node
    vertices: dict  # node -> (V, m) array of theta vertices, or None above the enumeration size
    _lp_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]

    def premium_rhs(self, node: int) -> np.ndarray:
        return self.r[node] - self.b[node]

    def is_complete(self) -> bool:
        return all(v is not None and len(v) == 1 for v in self.vertices.values())


def _basic_solutions(A: np.ndarray, rhs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Vertices of {x >= 0, A x = rhs} by enumerating basic column sets."""
    rank = np.linalg.matrix_rank(A, tol=1e-10)
    n = A.shape[1]
    out = []
    for cols in itertools.combinations(range(n), rank):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub, tol=1e-10) < rank:
            continue
        xb, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        x = np.zeros(n)
        x[list(cols)] = xb
        if np.abs(A @ x - rhs).max() > tol * max(1.0, np.abs(rhs).max()):
            continue
        if x.min() < -tol:
            continue
        x = np.maximum(x, 0.0)
        if not any(np.abs(x - y).max() <= 1e-10 for y in out):
            out.append(x)
    return np.array(out).reshape(-1, n)


def _polytope_system(tree, node, sigma, rhs):
    st = tree.stats(node)
    sup = list(st.support)
    p = st.p
    A = np.vstack([np.ones(len(sup)), sigma[:, sup]])
    # sigma (q - p) = rhs  <=>  sigma q = rhs + sigma p
    target = np.concatenate([[1.0], rhs + sigma @ p])
    return sup, A, target


def node_vertices(tree: ScenarioTree, node: int, sigma: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """theta vertices of the premium polytope at a node (rows)."""
    sup, A, target = _polytope_system(tree, node, sigma, rhs)
    qs = _basic_solutions(A, target)
    p = tree.law[node]
    out = np.zeros((len(qs), tree.state_count))
    for k, q in enumerate(qs):
        out[k, sup] = q
        out[k] -= p
    return out


def build_market(tree: ScenarioTree, spec: MarketSpec) -> Market:
    """Materialize prices and premium polytopes; checks positivity and the martingale property."""
    r, b, sig, S0 = spec.arrays(tree)
    n, k = tree.n_nodes, S0.size
    if np.any(S0 <= 0):
        raise NegativePrice("initial prices must be positive", node=tree.ids[0])
    if np.any(r[[i for i in range(n) if not tree.is_terminal(i)]] <= -1.0):
        raise SolverError("short rate must exceed -1")
    prices = np.zeros((n, k))
    prices[0] = S0
    disc = np.ones(n)
    for c in range(1, n):
        a, i = int(tree.parent[c]), int(tree.state[c])
        inc = np.eye(tree.state_count)[i] - tree.law[a]
        prices[c] = prices[a] * (1.0 + b[a] + sig[a] @ inc)
        disc[c] = disc[a] / (1.0 + r[a])
        if np.any(prices[c] <= 0):
            raise NegativePrice(f"asset price {prices[c].min():.6g} <= 0", node=tree.ids[c])
    vertices = {}
    mkt = Market(tree, r, b, sig, prices, disc, vertices)
    for node in range(n):
        if tree.is_terminal(node):
            continue
        st = tree.stats(node)
        if st.q_dim <= VERTEX_DIM_MAX:
            V = node_vertices(tree, node, sig[node], r[node] - b[node])
            if len(V) == 0:
                raise EmptyPolytope("no risk premium satisfies the pricing constraints (arbitrage)",
                                    node=tree.ids[node])
            vertices[node] = V
        else:
            vertices[node] = None
            _lp_extreme(mkt, node, np.zeros(tree.state_count), "inf")
        check = vertices[node] if vertices[node] is not None else []
        for th in check:
            err = martingale_error(mkt, node, tree.law[node] + th)
            if err > MART_TOL * max(1.0, float(np.abs(prices[node]).max())):
                raise SolverError(f"vertex fails the martingale check by {err:.3e}", node=tree.ids[node])
    return mkt


def martingale_error(market: Market, node: int, q) -> float:
    """max_i |E_q[S^i_{t+1}] - (1 + r) S^i_t|."""
    tree = market.tree
    cv = tree.child_values(market.prices, node)
    q = np.asarray(q, dtype=float)
    return float(np.abs(q @ cv - (1 + market.r[node]) * market.prices[node]).max())


def _lp_extreme(market: Market, node: int, z: np.ndarray, mode: str):
    tree = market.tree
    sup, A, target = _polytope_system(tree, node, market.sigma[node], market.premium_rhs(node))
    c = np.asarray(z, dtype=float)[sup]
    sign = 1.0 if mode == "inf" else -1.0
    res = linprog(sign * c, A_eq=A, b_eq=target, bounds=[(0, 1)] * len(sup), method="highs")
    if res.status != 0:
        raise EmptyPolytope("premium polytope is empty (arbitrage)", node=tree.ids[node])
    theta = np.zeros(tree.state_count)
    theta[sup] = res.x
    theta -= tree.law[node]
    return float(z @ theta), theta


def theta_extremes(market: Market, node: int, z, mode: str = "sup") -> tuple[float, np.ndarray]:
    """Exact optimum of z'theta over the premium polytope, attained at a vertex."""
    z = np.asarray(z, dtype=float)
    V = market.vertices.get(node)
    if V is None:
        return _lp_extreme(market, node, z, mode)
    vals = V @ z
    k = int(np.argmin(vals) if mode == "inf" else np.argmax(vals))
    return float(vals[k]), V[k]


class MarketDriver(YLinearDriver):
    """f(y, z) = -r y + inf_theta z'theta (mode 'inf') or sup (mode 'sup')."""

    depends_on_y = True
    normalised = False

    def __init__(self, market: Market, mode: str):
        if mode not in ("inf", "sup"):
            raise ValueError(f"mode must be 'inf' or 'sup', got {mode!r}")
        self.market = market
        self.mode = mode
        self.depends_on_z = True

    def y_coef(self, node):
        return -float(self.market.r[node])

    def z_term(self, node, z):
        return theta_extremes(self.market, node, z, self.mode)[0]


def fixed_selection_driver(market: Market, selection) -> AffineDriver:
    """Linear pricing driver -r y + theta'z for a per-node vertex index selection."""
    tree = market.tree
    gamma = np.zeros((tree.n_nodes, tree.state_count))
    for n, k in enumerate(selection):
        if not tree.is_terminal(n):
            gamma[n] = market.vertices[n][int(k)]
    return AffineDriver(tree, beta=-market.r, gamma=gamma)


# ------------------------------------------------------------ european
@dataclass
class EuropeanBounds:
    sub: BsdeSolution
    super: BsdeSolution


def price_european_bounds(market: Market, xi) -> EuropeanBounds:
    """Largest subreplication and smallest superreplication price processes."""
    tree = market.tree
    xi = _terminal_array(tree, xi, tree.horizon)
    return EuropeanBounds(
        sub=solve_bsde(tree, xi, MarketDriver(market, "inf")),
        super=solve_bsde(tree, xi, MarketDriver(market, "sup")),
    )


def selection_count(market: Market) -> int:
    out = 1
    for v in market.vertices.values():
        if v is None:
            return -1
        out *= len(v)
    return out


def enumerate_selection_prices(market: Market, xi, cap: int = 200_000) -> np.ndarray:
    """E_Q[xi R_T] at the root for every global vertex selection (brute force)."""
    tree = market.tree
    xi = _terminal_array(tree, xi, tree.horizon)
    count = selection_count(market)
    if count < 0 or count > cap:
        raise SolverError(f"{count} vertex selections exceed the enumeration cap {cap}")
    inner = [n for n in range(tree.n_nodes) if not tree.is_terminal(n)]
    leaves = tree.leaves
    paths = [tree.path(int(lf)) for lf in leaves]
    out = []
    for choice in itertools.product(*(range(len(market.vertices[n])) for n in inner)):
        q = {n: tree.law[n] + market.vertices[n][k] for n, k in zip(inner, choice)}
        total = 0.0
        for lf, path in zip(leaves, paths):
            w = 1.0
            for a, c in zip(path[:-1], path[1:]):
                w *= q[a][tree.state[c]]
            total += w * xi[lf] * market.discount[lf]
        out.append(total)
    return np.array(out)


# ------------------------------------------------------------ american
@dataclass
class AmericanBounds:
    sub: RbsdeSolution
    super: RbsdeSolution
    exercise: StoppingTime  # first hitting of {super.Y = payoff}
    exercise_sub: StoppingTime


def price_american_bounds(market: Market, payoff) -> AmericanBounds:
    """Reflected equations with obstacle = payoff and terminal = payoff at the horizon."""
    tree = market.tree
    payoff = np.asarray(payoff, dtype=float)
    sup = solve_rbsde(tree, payoff, MarketDriver(market, "sup"), payoff)
    sub = solve_rbsde(tree, payoff, MarketDriver(market, "inf"), payoff)
    return AmericanBounds(
        sub=sub,
        super=sup,
        exercise=first_hitting_rule(tree, sup.Y, payoff),
        exercise_sub=first_hitting_rule(tree, sub.Y, payoff),
    )


def fixed_selection_price(market: Market, payoff, selection, american: bool) -> np.ndarray:
    """Price process under one vertex selection (linear driver)."""
    tree = market.tree
    drv = fixed_selection_driver(market, selection)
    payoff = np.asarray(payoff, dtype=float)
    if american:
        return solve_rbsde(tree, payoff, drv, payoff).Y
    return solve_bsde(tree, payoff, drv).Y


# ------------------------------------------------------------ payoffs
def claim_payoff(market: Market, kind: str, strike: float, asset: int = 0) -> np.ndarray:
    s = market.prices[:, asset]
    if kind == "call":
        return np.maximum(s - strike, 0.0)
    if kind == "put":
        return np.maximum(strike - s, 0.0)
    raise SolverError(f"unknown payoff {kind!r}")


# ------------------------------------------------------------ oracle
def crr_oracle(market: Market, payoff, american: bool = False) -> np.ndarray:
    """Classical binomial backward induction with q = (1 + r - d) / (u - d).

    Computed from the price ratios alone; raises NotComplete unless the tree
    is binary with one asset and both moves are possible at every node.
    """
    tree = market.tree
    if tree.state_count != 2 or market.n_assets != 1:
        raise NotComplete("oracle needs a binary tree with one asset")
    payoff = np.asarray(payoff, dtype=float)
    V = np.zeros(tree.n_nodes)
    V[tree.leaves] = payoff[tree.leaves]
    for n in reversed(range(tree.n_nodes)):
        if tree.is_terminal(n):
            continue
        up, down = tree.child_index[n]
        if up < 0 or down < 0 or min(tree.law[n]) <= 0:
            raise NotComplete("a node has a single possible move", node=tree.ids[n])
        s = market.prices[n, 0]
        u, d = market.prices[up, 0] / s, market.prices[down, 0] / s
        if u < d:
            u, d, up, down = d, u, down, up
        g = 1.0 + market.r[n]
        q = (g - d) / (u - d)
        if not 0.0 <= q <= 1.0:
            raise NotComplete(f"risk-neutral probability {q:.6g} outside [0, 1]", node=tree.ids[n])
        cont = (q * V[up] + (1 - q) * V[down]) / g
        V[n] = max(payoff[n], cont) if american else cont
    return V


# ------------------------------------------------------------ strategies
@dataclass
class StrategyReport:
    H: np.ndarray  # (N, k) stock holdings chosen at each node (NaN if not identifiable)
    H0: np.ndarray  # bond holding in value units, V_t - H . S_t
    status: list  # per node: ok | singular_sigma | not_spanned | terminal
    residual: np.ndarray  # per node: max over support edges of the super-strategy identity error

    def max_residual(self) -> float:
        ok = [n for n, s in enumerate(self.status) if s == "ok"]
        return float(self.residual[ok].max()) if ok else 0.0


def recover_strategy(market: Market, sol, tol: float = 1e-9) -> StrategyReport:
    """Stock holdings H with Z ~_M sigma'(H * S), and the residual of
    V_{t+1} - V_t = r (V_t - H.S_t) + H.(S_{t+1} - S_t) - (K_{t+1} - K_t)."""
    tree = market.tree
    n, k = tree.n_nodes, market.n_assets
    H = np.full((n, k), np.nan)
    H0 = np.full(n, np.nan)
    status, resid = [], np.zeros(n)
    dK = getattr(sol, "dK", np.zeros(n))
    for node in range(n):
        if tree.is_terminal(node):
            status.append("terminal")
            continue
        st = tree.stats(node)
        sig = market.sigma[node]
        if np.linalg.matrix_rank(sig @ sig.T, tol=1e-12) < k:
            status.append("singular_sigma")
            continue
        sup = list(st.support)
        inc = st.increments()[sup]  # rows e_i - p
        h = inc @ sol.Z[node]
        A = inc @ sig.T  # (|sup|, k): (e_i - p)' sigma' u
        u, *_ = np.linalg.lstsq(A, h, rcond=None)
        if np.abs(A @ u - h).max() > tol * max(1.0, float(np.abs(h).max())):
            status.append("not_spanned")
            continue
        S = market.prices[node]
        H[node] = u / S
        H0[node] = sol.Y[node] - H[node] @ S
        worst = 0.0
        for i in sup:
            c = tree.child_index[node, i]
            lhs = sol.Y[c] - sol.Y[node]
            rhs = market.r[node] * H0[node] + H[node] @ (market.prices[c] - S) - dK[node]
            worst = max(worst, abs(lhs - rhs))
        resid[node] = worst
        status.append("ok")
    return StrategyReport(H=H, H0=H0, status=status, residual=resid)


def superhedge_gap(market: Market, Y) -> float:
    """min over nodes and vertices of (1 + r) Y_t - E_q[Y_{t+1}]; nonnegative for a super-price."""
    tree = market.tree
    Y = np.asarray(Y, dtype=float)
    worst = np.inf
    for node, V in market.vertices.items():
        if V is None:
            continue
        cv = tree.child_values(Y, node)
        for th in V:
            worst = min(worst, (1 + market.r[node]) * Y[node] - (tree.law[node] + th) @ cv)
    return float(worst)
