"""Time-consistent multiple-prior families built from per-node drift selections.

A selection theta is a Q-vector per non-terminal node; it defines the
one-step law q = p + theta, so that E_Q[M_{t+1} | F_t] = theta.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .bsde import AffineDriver, YLinearDriver
from .errors import InvalidTheta, KappaInadmissible, ScenarioNotAbsolutelyContinuous, SolverError
from .tree import ScenarioTree, _frozen

THETA_TOL = 1e-12
KAPPA_DIRS_2D = 64
KAPPA_DIRS_ND = 500


# ------------------------------------------------------------ selections
def validate_theta(tree: ScenarioTree, node: int, theta, tol: float = THETA_TOL) -> np.ndarray:
    """Return theta as an array after checking the Q-vector and 0 <= p + theta <= 1 conditions."""
    theta = np.asarray(theta, dtype=float)
    p = tree.law[node]
    nid = tree.ids[node]
    if theta.shape != p.shape:
        raise InvalidTheta(f"theta has shape {theta.shape}, expected {p.shape}", node=nid)
    if np.any(np.abs(theta[p == 0]) > tol):
        raise InvalidTheta("theta is nonzero off the support", node=nid)
    if abs(theta.sum()) > 1e-10:
        raise InvalidTheta(f"theta sums to {theta.sum():.3e}, not 0", node=nid)
    q = p + theta
    if np.any(q < -tol) or np.any(q > 1 + tol):
        raise InvalidTheta("p + theta leaves [0, 1]", node=nid)
    return theta


@dataclass(frozen=True)
class ThetaSelection:
    """Validated theta per node (rows at terminal nodes are zero)."""

    theta: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, tree: ScenarioTree, theta) -> "ThetaSelection":
        theta = np.array(theta, dtype=float)
        if theta.shape != (tree.n_nodes, tree.state_count):
            raise InvalidTheta(f"selection must have shape {(tree.n_nodes, tree.state_count)}, got {theta.shape}")
        for n in range(tree.n_nodes):
            if tree.is_terminal(n):
                theta[n] = 0.0
            else:
                validate_theta(tree, n, theta[n])
        return cls(_frozen(theta))

    @classmethod
    def zero(cls, tree: ScenarioTree) -> "ThetaSelection":
        return cls(_frozen(np.zeros((tree.n_nodes, tree.state_count))))


@dataclass
class Measure:
    """One-step laws of Q^theta and its density process against P."""

    q: np.ndarray  # (N, m) child laws
    density: np.ndarray  # W_t per node, from products of q_i / p_i
    density_product_form: np.ndarray  # W_t from products of 1 + theta' psi^+ M
    expectation: float  # E_P[W_T]

    @property
    def W_T(self) -> np.ndarray:
        return self.density

    @property
    def form_gap(self) -> float:
        """Largest relative disagreement between the two density computations."""
        diff = np.abs(self.density - self.density_product_form)
        return float((diff / np.maximum(1.0, np.abs(self.density))).max())


def measure_from_theta(tree: ScenarioTree, sel: ThetaSelection | np.ndarray) -> Measure:
    """Child laws q = p + theta and densities, computed two independent ways."""
    if not isinstance(sel, ThetaSelection):
        sel = ThetaSelection.build(tree, sel)
    th = sel.theta
    q = np.where(np.asarray([tree.is_terminal(n) for n in range(tree.n_nodes)])[:, None], 0.0, tree.law + th)
    ratio = np.ones(tree.n_nodes)
    prod = np.ones(tree.n_nodes)
    for c in range(1, tree.n_nodes):
        a, i = int(tree.parent[c]), int(tree.state[c])
        p_i = tree.law[a, i]
        st = tree.stats(a)
        step = q[a, i] / p_i if p_i > 0 else 0.0
        inc = np.eye(tree.state_count)[i] - st.p
        factor = 1.0 + th[a] @ st.psi_pinv @ inc if p_i > 0 else 0.0
        ratio[c] = ratio[a] * step
        prod[c] = prod[a] * factor
    leaves = tree.leaves
    return Measure(q=q, density=ratio, density_product_form=prod,
                   expectation=float(tree.prob[leaves] @ ratio[leaves]))


def theta_moment(tree: ScenarioTree, node: int, q) -> np.ndarray:
    """E_Q[M_{t+1} | node] for a one-step law q."""
    st = tree.stats(node)
    return np.asarray(q, dtype=float) @ st.increments()


# ------------------------------------------------------------ kappa-ignorance
def _per_node_scalar(tree, value) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (tree.n_nodes,)).copy()


def kappa_limit(tree: ScenarioTree, node: int, norm: str = "M") -> float:
    """Largest kappa whose constraint set keeps 0 <= p + theta <= 1 at ``node``.

    With norm ``M`` the family is {theta' psi^+ theta <= kappa^2}, whose i-th
    coordinate ranges over +-kappa sqrt(psi_ii); with ``Mplus`` it is
    {theta' psi theta <= kappa^2}, ranging over +-kappa sqrt(psi^+_ii).
    """
    st = tree.stats(node)
    spread = np.diag(st.psi) if norm == "M" else np.diag(st.psi_pinv)
    room = np.minimum(st.p, 1.0 - st.p)
    out = np.inf
    for i in st.support:
        if spread[i] > 0:
            out = min(out, room[i] / np.sqrt(spread[i]))
    return float(out)


class KappaDriver(YLinearDriver):
    """f(z) = -kappa |z|, with |z| = sqrt(z' psi z) (norm M) or sqrt(z' psi^+ z) (norm Mplus)."""

    depends_on_y = False
    normalised = True

    def __init__(self, tree: ScenarioTree, kappa, norm: str = "M"):
        if norm not in ("M", "Mplus"):
            raise ValueError(f"norm must be 'M' or 'Mplus', got {norm!r}")
        self.tree = tree
        self.kappa = _per_node_scalar(tree, kappa)
        self.norm = norm
        self.depends_on_z = bool(np.any(self.kappa != 0))

    def z_term(self, node, z):
        st = self.tree.stats(node)
        mat = st.psi if self.norm == "M" else st.psi_pinv
        return -self.kappa[node] * float(np.sqrt(max(z @ mat @ z, 0.0)))


def kappa_driver(tree: ScenarioTree, kappa, norm: str = "M", tol: float = 1e-12) -> KappaDriver:
    """kappa-ignorance driver after checking admissibility at every non-terminal node."""
    kap = _per_node_scalar(tree, kappa)
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        if kap[n] < 0:
            raise KappaInadmissible(f"kappa = {kap[n]} < 0", node=tree.ids[n])
        lim = kappa_limit(tree, n, norm)
        if kap[n] > lim * (1 + tol):
            raise KappaInadmissible(
                f"kappa = {kap[n]:.6g} exceeds the admissible bound {lim:.6g} for norm {norm}",
                node=tree.ids[n],
            )
    return KappaDriver(tree, kap, norm)


def kappa_options(tree: ScenarioTree, node: int, kappa: float, norm: str = "M",
                  n_dirs: int | None = None, seed: int = 0) -> tuple[np.ndarray, bool]:
    """Boundary points of the kappa constraint set plus theta = 0; flag = exact (Q-space dim <= 1)."""
    st = tree.stats(node)
    d = st.q_dim
    m = tree.state_count
    if d == 0 or kappa == 0:
        return np.zeros((1, m)), True
    scale = np.sqrt(st.q_eigs) if norm == "M" else 1.0 / np.sqrt(st.q_eigs)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        exact = True
    elif d == 2:
        k = n_dirs or KAPPA_DIRS_2D
        ang = 2 * np.pi * np.arange(k) / k
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        exact = False
    else:
        k = n_dirs or KAPPA_DIRS_ND
        rng = np.random.default_rng(seed + node)
        dirs = rng.normal(size=(k, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        exact = False
    pts = kappa * (dirs * scale) @ st.q_basis.T
    return np.vstack([np.zeros(m), pts]), exact


# ------------------------------------------------------------ scenarios
def _scenario_rows(tree: ScenarioTree, node: int, scenarios) -> np.ndarray:
    if isinstance(scenarios, dict):
        rows = scenarios.get(tree.ids[node], scenarios.get(node, []))
    else:
        rows = scenarios
    return np.asarray(rows, dtype=float).reshape(-1, tree.state_count)


class ScenarioDriver(YLinearDriver):
    """f(z) = kappa * min_i z'(pi^i - pi^0), the minimum including i = 0."""

    depends_on_y = False
    normalised = True

    def __init__(self, tree: ScenarioTree, kappa, scenarios):
        self.tree = tree
        self.kappa = _per_node_scalar(tree, kappa)
        self.scenarios = scenarios
        self._dirs = {}
        self.depends_on_z = bool(np.any(self.kappa != 0))

    def directions(self, node: int) -> np.ndarray:
        d = self._dirs.get(node)
        if d is None:
            rows = _scenario_rows(self.tree, node, self.scenarios)
            d = self._dirs[node] = rows - self.tree.law[node]
        return d

    def z_term(self, node, z):
        d = self.directions(node)
        if d.size == 0:
            return 0.0
        return self.kappa[node] * min(0.0, float((d @ z).min()))


def scenario_driver(tree: ScenarioTree, kappa, scenarios) -> ScenarioDriver:
    """Scenario-perturbation driver; ``scenarios`` is a list of laws or a dict node id -> list."""
    kap = _per_node_scalar(tree, kappa)
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        nid = tree.ids[n]
        if not 0.0 <= kap[n] <= 1.0:
            raise KappaInadmissible(f"scenario kappa = {kap[n]} outside [0, 1]", node=nid)
        p = tree.law[n]
        for row in _scenario_rows(tree, n, scenarios):
            if np.any(row < -THETA_TOL) or abs(row.sum() - 1.0) > 1e-9:
                raise ScenarioNotAbsolutelyContinuous("scenario is not a probability vector", node=nid)
            if np.any(row[p == 0] > THETA_TOL):
                raise ScenarioNotAbsolutelyContinuous(
                    "scenario charges a state with zero reference probability", node=nid
                )
    return ScenarioDriver(tree, kap, scenarios)


# ------------------------------------------------------------ families
@dataclass
class PriorFamily:
    """kind is 'kappa', 'scenario' or 'explicit'.

    explicit: ``thetas`` maps node ids to lists of theta options (missing nodes
    default to {0}); ``baseline`` adds theta = 0 to every option set.
    """

    kind: str
    kappa: float | np.ndarray = 0.0
    norm: str = "M"
    scenarios: object = None
    thetas: dict | None = None
    baseline: bool = True

    @classmethod
    def from_json(cls, d: dict) -> "PriorFamily":
        kind = d.get("kind")
        if kind == "kappa":
            return cls("kappa", kappa=float(d.get("kappa", 0.0)), norm=d.get("norm", "M"))
        if kind == "scenario":
            return cls("scenario", kappa=float(d.get("kappa", 1.0)), scenarios=d.get("scenarios", []))
        if kind == "explicit":
            return cls("explicit", thetas=dict(d.get("thetas", {})), baseline=bool(d.get("baseline", True)))
        raise SolverError(f"unknown prior family kind {kind!r}")

    def driver(self, tree: ScenarioTree, mode: str = "inf"):
        """Normalised driver whose g-expectation is the inf (or sup) over the family."""
        if self.kind == "kappa":
            d = kappa_driver(tree, self.kappa, self.norm)
            return d if mode == "inf" else _Negated(tree, d)
        if self.kind == "scenario":
            d = scenario_driver(tree, self.kappa, self.scenarios)
            return d if mode == "inf" else _Negated(tree, d)
        return ExplicitDriver(tree, self, mode)

    def options(self, tree: ScenarioTree, node: int, n_dirs: int | None = None, seed: int = 0):
        """(theta options, exact flag) at a node."""
        if self.kind == "kappa":
            kap = _per_node_scalar(tree, self.kappa)[node]
            return kappa_options(tree, node, kap, self.norm, n_dirs, seed)
        if self.kind == "scenario":
            kap = _per_node_scalar(tree, self.kappa)[node]
            rows = _scenario_rows(tree, node, self.scenarios)
            opts = np.vstack([np.zeros(tree.state_count), kap * (rows - tree.law[node])])
            return opts, True
        raw = (self.thetas or {}).get(tree.ids[node], [])
        opts = np.asarray(raw, dtype=float).reshape(-1, tree.state_count)
        if self.baseline or opts.size == 0:
            opts = np.vstack([np.zeros(tree.state_count), opts])
        for th in opts:
            validate_theta(tree, node, th)
        return opts, True

    def as_affine_family(self, tree: ScenarioTree) -> list[AffineDriver]:
        """Linear members gamma = theta for option-indexed families (scenario, explicit)."""
        if self.kind == "kappa":
            raise SolverError("kappa family has a continuum of members; use options() to discretize")
        inner = [n for n in range(tree.n_nodes) if not tree.is_terminal(n)]
        per_node = {n: self.options(tree, n)[0] for n in inner}
        width = max(len(v) for v in per_node.values())
        out = []
        for k in range(width):
            gamma = np.zeros((tree.n_nodes, tree.state_count))
            for n, opts in per_node.items():
                gamma[n] = opts[min(k, len(opts) - 1)]
            out.append(AffineDriver(tree, gamma=gamma))
        return out

    def admits(self, tree: ScenarioTree, sel: ThetaSelection, tol: float = 1e-10) -> bool:
        """Whether every node's theta is one of the family's options (explicit/scenario)
        or inside the constraint set (kappa)."""
        for n in range(tree.n_nodes):
            if tree.is_terminal(n):
                continue
            th = sel.theta[n]
            if self.kind == "kappa":
                st = tree.stats(n)
                kap = _per_node_scalar(tree, self.kappa)[n]
                mat = st.psi_pinv if self.norm == "M" else st.psi
                if th @ mat @ th > kap ** 2 + tol:
                    return False
                # must lie in the Q-space spanned by the support
                if np.abs(th - st.q_basis @ (st.q_basis.T @ th)).max() > tol:
                    return False
            else:
                opts, _ = self.options(tree, n)
                if not np.any(np.abs(opts - th).max(axis=1) <= tol):
                    return False
        return True


def paste(tree: ScenarioTree, sel1: ThetaSelection, sel2: ThetaSelection, node: int) -> ThetaSelection:
    """Follow sel1 except on the subtree rooted at ``node`` (the event), where sel2 applies."""
    th = sel1.theta.copy()
    sub = tree.subtree(node)
    th[sub] = sel2.theta[sub]
    return ThetaSelection(_frozen(th))


class _Negated(YLinearDriver):
    """-d(-z): turns an inf-family driver into the matching sup-family driver."""

    depends_on_y = False
    normalised = True

    def __init__(self, tree, inner: YLinearDriver):
        self.tree = tree
        self.inner = inner
        self.depends_on_z = inner.depends_on_z

    def z_term(self, node, z):
        return -self.inner.z_term(node, -np.asarray(z, dtype=float))


class ExplicitDriver(YLinearDriver):
    """f(z) = min (or max) over the node's theta options of theta'z."""

    depends_on_y = False
    normalised = True

    def __init__(self, tree: ScenarioTree, family: PriorFamily, mode: str = "inf"):
        self.tree = tree
        self.mode = mode
        self.opts = {n: family.options(tree, n)[0] for n in range(tree.n_nodes) if not tree.is_terminal(n)}

    def z_term(self, node, z):
        v = self.opts[node] @ z
        return float(v.min() if self.mode == "inf" else v.max())


# ------------------------------------------------------------ oracles
@dataclass
class OracleResult:
    value: float
    gap: float  # bound on |oracle - exact robust expectation| at the node
    values: np.ndarray  # oracle value per node
    gaps: np.ndarray
    exact: bool


def _kappa_exact_local(tree, node, kappa, norm, v, mode):
    """Exact opt of theta'v over the kappa constraint set."""
    st = tree.stats(node)
    mat = st.psi if norm == "M" else st.psi_pinv
    h = np.where(st.p > 0, v - st.p @ v, 0.0)
    z = st.psi_pinv @ (st.p * h)
    val = kappa * float(np.sqrt(max(z @ mat @ z, 0.0)))
    return -val if mode == "inf" else val


def robust_expectation_oracle(tree: ScenarioTree, xi, family: PriorFamily, node: int = 0,
                              mode: str = "inf", n_dirs: int | None = None, seed: int = 0,
                              obstacle=None) -> OracleResult:
    """Backward recursion V_t = opt_theta sum_i (p_i + theta_i) V_{t+1}, independent of the BSDE route.

    With ``obstacle`` the recursion becomes the robust Snell envelope
    V_t = max(S_t, opt_theta E_theta[V_{t+1}]).
    For kappa families the options are a finite sample of the constraint
    boundary; the reported gap bounds the resulting error (local gaps summed
    along the worst path).
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (tree.n_nodes,):
        full = np.zeros(tree.n_nodes)
        full[tree.leaves] = xi
        xi = full
    opt = np.min if mode == "inf" else np.max
    S = None if obstacle is None else np.asarray(obstacle, dtype=float)
    V = np.zeros(tree.n_nodes)
    G = np.zeros(tree.n_nodes)
    V[tree.leaves] = xi[tree.leaves]
    all_exact = True
    for n in reversed(range(tree.n_nodes)):
        if tree.is_terminal(n):
            continue
        opts, exact = family.options(tree, n, n_dirs, seed)
        cv = tree.child_values(V, n)
        base = tree.law[n] @ cv
        val = float(base + opt(opts @ cv))
        local = 0.0
        if family.kind == "kappa" and not exact:
            all_exact = False
            kap = _per_node_scalar(tree, family.kappa)[n]
            ex = float(base + _kappa_exact_local(tree, n, kap, family.norm, cv, mode))
            local = abs(val - ex)
        if S is not None:
            val = max(val, S[n])
        V[n] = val
        G[n] = local + max((G[c] for c in tree.support_children(n)), default=0.0)
    return OracleResult(value=float(V[node]), gap=float(G[node]), values=V, gaps=G, exact=all_exact)


def robust_snell_oracle(tree: ScenarioTree, payoff, family: PriorFamily, mode: str = "inf",
                        n_dirs: int | None = None, seed: int = 0) -> OracleResult:
    """Robust Snell envelope of an adapted payoff (terminal value = payoff at the horizon)."""
    payoff = np.asarray(payoff, dtype=float)
    return robust_expectation_oracle(tree, payoff, family, 0, mode, n_dirs, seed, obstacle=payoff)


def zero_family() -> PriorFamily:
    return PriorFamily("explicit", thetas={}, baseline=True)


__all__ = [
    "ThetaSelection",
    "Measure",
    "measure_from_theta",
    "theta_moment",
    "kappa_limit",
    "kappa_driver",
    "kappa_options",
    "KappaDriver",
    "ScenarioDriver",
    "scenario_driver",
    "PriorFamily",
    "ExplicitDriver",
    "paste",
    "OracleResult",
    "robust_expectation_oracle",
    "robust_snell_oracle",
    "zero_family",
]
