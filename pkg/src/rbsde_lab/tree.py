"""Finite scenario trees carrying the law of a finite-state process.

Nodes are stored in breadth-first order, so every parent precedes its
children and ``reversed(range(tree.n_nodes))`` is a valid backward sweep.
States are 0-based internally; the JSON format and generated node ids use
1-based state labels.

Adapted processes are plain numpy arrays indexed by node: shape ``(N,)`` for
scalar processes and ``(N, m)`` for vector processes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DepthMismatch,
    EmptySupport,
    InvalidStoppingTime,
    NonStochasticLaw,
    NotCentered,
    TerminalNode,
    TreeError,
)

PROB_SUM_TOL = 1e-9
PINV_CUTOFF = 1e-12  # relative to the largest eigenvalue of psi
CENTER_TOL = 1e-10


@dataclass(frozen=True)
class NodeStats:
    """One-step conditional moments of the state process at a node."""

    p: np.ndarray
    support: tuple[int, ...]
    psi: np.ndarray
    psi_pinv: np.ndarray
    # orthonormal basis of the Q-vector space and the matching eigenvalues of psi
    q_basis: np.ndarray
    q_eigs: np.ndarray

    @property
    def q_dim(self) -> int:
        return self.q_basis.shape[1]

    def increments(self) -> np.ndarray:
        """Rows are M = e_i - p for every state i (meaningful on the support)."""
        return np.eye(self.p.size) - self.p[None, :]


def _stats_from_law(p: np.ndarray) -> NodeStats:
    p = np.asarray(p, dtype=float)
    support = tuple(int(i) for i in np.flatnonzero(p > 0))
    psi = np.diag(p) - np.outer(p, p)
    psi = 0.5 * (psi + psi.T)
    eigs, vecs = np.linalg.eigh(psi)
    top = eigs.max() if eigs.size else 0.0
    keep = eigs > PINV_CUTOFF * top if top > 0 else np.zeros_like(eigs, dtype=bool)
    basis = vecs[:, keep]
    lam = eigs[keep]
    pinv = (basis / lam) @ basis.T if lam.size else np.zeros_like(psi)
    return NodeStats(p=p, support=support, psi=psi, psi_pinv=pinv, q_basis=basis, q_eigs=lam)


class ScenarioTree:
    """Immutable non-recombining scenario tree.

    Use :func:`build_tree`, :meth:`from_kernel` or :meth:`from_nodes` rather
    than calling the constructor directly.
    """

    def __init__(self, horizon, state_count, ids, time, parent, state, child_index, law):
        self.horizon = int(horizon)
        self.state_count = int(state_count)
        self.ids = tuple(ids)
        self.time = _frozen(np.asarray(time, dtype=int))
        self.parent = _frozen(np.asarray(parent, dtype=int))
        self.state = _frozen(np.asarray(state, dtype=int))
        self.child_index = _frozen(np.asarray(child_index, dtype=int))
        self.law = _frozen(np.asarray(law, dtype=float))
        self.index = {nid: k for k, nid in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise TreeError("duplicate node ids")
        self._stats: dict[int, NodeStats] = {}

    # ------------------------------------------------------------------ build
    @classmethod
    def from_kernel(cls, horizon: int, kernel, initial_state: int = 0) -> "ScenarioTree":
        """Unroll a homogeneous kernel into a full tree of depth ``horizon``.

        ``kernel`` is either a probability vector (i.i.d. steps) or an m x m
        row-stochastic matrix (Markov steps, row = current state). Children are
        created only for positive-probability transitions.
        """
        k = np.asarray(kernel, dtype=float)
        if k.ndim == 2 and k.shape[0] == 1:
            k = k[0]
        if k.ndim == 1:
            rows = k[None, :]
            markov = False
        elif k.ndim == 2 and k.shape[0] == k.shape[1]:
            rows = k
            markov = True
        else:
            raise TreeError(f"kernel must be a vector or a square matrix, got shape {k.shape}")
        m = rows.shape[1]
        if m < 2:
            raise TreeError("state_count must be at least 2")
        if horizon < 1:
            raise DepthMismatch("horizon must be >= 1")
        for r, row in enumerate(rows):
            _check_law(row, f"kernel row {r + 1}")

        ids, time, parent, state = ["r"], [0], [-1], [-1]
        cur = [(0, initial_state)]
        for t in range(horizon):
            nxt = []
            for node, s in cur:
                row = rows[s] if markov else rows[0]
                for i in np.flatnonzero(row > 0):
                    ids.append(f"{ids[node]}.{i + 1}")
                    time.append(t + 1)
                    parent.append(node)
                    state.append(int(i))
                    nxt.append((len(ids) - 1, int(i)))
            cur = nxt
        n = len(ids)
        child_index = np.full((n, m), -1, dtype=int)
        law = np.zeros((n, m))
        for c in range(1, n):
            child_index[parent[c], state[c]] = c
        for node in range(n):
            if time[node] < horizon:
                s = state[node] if markov and node else initial_state
                law[node] = rows[s] if markov else rows[0]
        return cls(horizon, m, ids, time, parent, state, child_index, law)

    @classmethod
    def from_nodes(cls, nodes: Sequence[dict], state_count: int, horizon: int | None = None) -> "ScenarioTree":
        """Build from an explicit node list (JSON ``nodes`` format).

        Each entry is ``{"id", "time", "children": [{"state", "prob", "id"}]}``
        with 1-based states. Zero-probability children are kept as nodes but
        are excluded from the support.
        """
        problems = node_list_problems(nodes, state_count, horizon)
        if problems:
            exc, msg, nid = problems[0]
            raise exc(msg, node=nid)
        by_id = {str(d["id"]): d for d in nodes}
        child_ids = {str(c["id"]) for d in nodes for c in d.get("children", ())}
        root = next(nid for nid in by_id if nid not in child_ids)
        m = int(state_count)
        ids, time, parent, state = [root], [0], [-1], [-1]
        k = 0
        while k < len(ids):
            d = by_id[ids[k]]
            for c in sorted(d.get("children", ()), key=lambda c: int(c["state"])):
                ids.append(str(c["id"]))
                time.append(time[k] + 1)
                parent.append(k)
                state.append(int(c["state"]) - 1)
            k += 1
        n = len(ids)
        T = max(time) if horizon is None else int(horizon)
        child_index = np.full((n, m), -1, dtype=int)
        law = np.zeros((n, m))
        for c in range(1, n):
            child_index[parent[c], state[c]] = c
        for node, nid in enumerate(ids):
            for c in by_id[nid].get("children", ()):
                law[node, int(c["state"]) - 1] = float(c["prob"])
        return cls(T, m, ids, time, parent, state, child_index, law)

    # ------------------------------------------------------------ structure
    @property
    def n_nodes(self) -> int:
        return len(self.ids)

    @property
    def root(self) -> int:
        return 0

    def is_terminal(self, node: int) -> bool:
        return self.time[node] == self.horizon

    def children(self, node: int) -> list[int]:
        return [int(c) for c in self.child_index[node] if c >= 0]

    def support(self, node: int) -> tuple[int, ...]:
        return self.stats(node).support

    def support_children(self, node: int) -> list[int]:
        """Children reached with positive probability."""
        return [int(self.child_index[node, i]) for i in self.stats(node).support]

    @cached_property
    def layers(self) -> tuple[np.ndarray, ...]:
        return tuple(_frozen(np.flatnonzero(self.time == t)) for t in range(self.horizon + 1))

    @cached_property
    def leaves(self) -> np.ndarray:
        return self.layers[self.horizon]

    @cached_property
    def prob(self) -> np.ndarray:
        """Unconditional probability of reaching each node."""
        out = np.zeros(self.n_nodes)
        out[0] = 1.0
        for c in range(1, self.n_nodes):
            out[c] = out[self.parent[c]] * self.law[self.parent[c], self.state[c]]
        return _frozen(out)

    def path(self, node: int, start: int = 0) -> list[int]:
        """Nodes from ``start`` (an ancestor) down to ``node``, inclusive."""
        out = [node]
        while out[-1] != start:
            up = self.parent[out[-1]]
            if up < 0:
                raise TreeError(f"{self.ids[start]} is not an ancestor of {self.ids[node]}")
            out.append(int(up))
        return out[::-1]

    def subtree(self, node: int) -> list[int]:
        """Nodes of the subtree rooted at ``node`` in breadth-first order."""
        out = [node]
        k = 0
        while k < len(out):
            out.extend(self.children(out[k]))
            k += 1
        return out

    def leaves_under(self, node: int) -> list[int]:
        return [n for n in self.subtree(node) if self.is_terminal(n)]

    def ancestor_at(self, node: int, t: int) -> int:
        while self.time[node] > t:
            node = int(self.parent[node])
        return node

    def cond_prob(self, node: int, start: int) -> float:
        """P(reach ``node`` | at ``start``)."""
        nodes = self.path(node, start)
        out = 1.0
        for a, b in zip(nodes[:-1], nodes[1:]):
            out *= self.law[a, self.state[b]]
        return out

    # ------------------------------------------------------------ primitives
    def stats(self, node: int) -> NodeStats:
        if self.is_terminal(node):
            raise TerminalNode(f"node {self.ids[node]} is terminal", node=self.ids[node])
        st = self._stats.get(node)
        if st is None:
            st = self._stats[node] = _stats_from_law(self.law[node])
        return st

    def process(self, fn) -> np.ndarray:
        """Materialize an adapted process from ``fn(tree, node)``."""
        return np.array([fn(self, n) for n in range(self.n_nodes)], dtype=float)

    def child_values(self, values, node: int) -> np.ndarray:
        """Values of a process at the children of ``node``, indexed by state (0 off-tree)."""
        values = np.asarray(values, dtype=float)
        out = np.zeros((self.state_count,) + values.shape[1:])
        for i, c in enumerate(self.child_index[node]):
            if c >= 0:
                out[i] = values[c]
        return out

    def __repr__(self):
        return f"ScenarioTree(horizon={self.horizon}, state_count={self.state_count}, nodes={self.n_nodes})"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_law(row, where, node=None):
    row = np.asarray(row, dtype=float)
    if np.any(row < 0) or not np.all(np.isfinite(row)):
        raise NonStochasticLaw(f"{where}: negative or non-finite probability", node=node)
    if not np.any(row > 0):
        raise EmptySupport(f"{where}: no positive-probability child", node=node)
    if abs(row.sum() - 1.0) > PROB_SUM_TOL:
        raise NonStochasticLaw(f"{where}: probabilities sum to {row.sum():.12g}, not 1", node=node)


def node_list_problems(nodes, state_count, horizon=None) -> list[tuple[type, str, str | None]]:
    """Every structural violation of an explicit node list, as (error type, message, node id)."""
    out = []
    m = int(state_count)
    if m < 2:
        out.append((TreeError, "state_count must be at least 2", None))
    by_id = {}
    for d in nodes:
        nid = str(d.get("id"))
        if nid in by_id:
            out.append((TreeError, f"duplicate node id {nid}", nid))
        by_id[nid] = d
    parent_of = {}
    for nid, d in by_id.items():
        kids = d.get("children", ()) or ()
        states = [c.get("state") for c in kids]
        if len(set(states)) != len(states):
            out.append((TreeError, f"node {nid}: duplicate child states", nid))
        for c in kids:
            cid = str(c.get("id"))
            s = c.get("state")
            if not isinstance(s, int) or not 1 <= s <= m:
                out.append((TreeError, f"node {nid}: child state {s!r} outside 1..{m}", nid))
            if cid not in by_id:
                out.append((TreeError, f"node {nid}: child {cid} is not defined", nid))
            if cid in parent_of:
                out.append((TreeError, f"node {cid} has two parents", cid))
            parent_of[cid] = nid
        if kids:
            probs = [c.get("prob") for c in kids]
            if any(not isinstance(x, (int, float)) for x in probs):
                out.append((NonStochasticLaw, f"node {nid}: non-numeric probability", nid))
                continue
            try:
                _check_law(probs, f"node {nid}", node=nid)
            except TreeError as exc:
                out.append((type(exc), str(exc), nid))
    roots = [nid for nid in by_id if nid not in parent_of]
    if len(roots) != 1:
        out.append((TreeError, f"expected exactly one root, found {len(roots)}", None))
        return out
    # depth check
    depth = {roots[0]: 0}
    stack = [roots[0]]
    while stack:
        nid = stack.pop()
        d = by_id[nid]
        t = d.get("time")
        if t is not None and t != depth[nid]:
            out.append((DepthMismatch, f"node {nid}: time {t} but depth {depth[nid]}", nid))
        for c in d.get("children", ()) or ():
            cid = str(c.get("id"))
            if cid in by_id and cid not in depth:
                depth[cid] = depth[nid] + 1
                stack.append(cid)
    leaves = [nid for nid in depth if not by_id[nid].get("children")]
    T = horizon if horizon is not None else max(depth.values())
    if T is not None and T < 1:
        out.append((DepthMismatch, "horizon must be >= 1", None))
    for nid in leaves:
        if depth[nid] != T:
            out.append((DepthMismatch, f"leaf {nid} at depth {depth[nid]}, horizon is {T}", nid))
    return out


def build_tree(spec: dict) -> ScenarioTree:
    """Build a tree from its JSON description (kernel or explicit nodes)."""
    if "nodes" in spec:
        m = spec.get("state_count")
        if m is None:
            m = max(int(c["state"]) for d in spec["nodes"] for c in d.get("children", ()))
        tree = ScenarioTree.from_nodes(spec["nodes"], m, spec.get("horizon"))
    elif "kernel" in spec:
        init = int(spec.get("initial_state", 1)) - 1
        tree = ScenarioTree.from_kernel(int(spec["horizon"]), spec["kernel"], initial_state=init)
        if "state_count" in spec and int(spec["state_count"]) != tree.state_count:
            raise TreeError(f"state_count {spec['state_count']} does not match kernel width {tree.state_count}")
    else:
        raise TreeError("tree description needs either 'kernel' or 'nodes'")
    if "horizon" in spec and int(spec["horizon"]) != tree.horizon:
        raise DepthMismatch(f"declared horizon {spec['horizon']} but tree depth is {tree.horizon}")
    return tree


def node_stats(tree: ScenarioTree, node: int) -> NodeStats:
    return tree.stats(node)


def conditional_expectation(tree: ScenarioTree, values, node: int):
    """E[values_{t+1} | node], restricted to the support."""
    st = tree.stats(node)
    cv = tree.child_values(values, node)
    return st.p @ cv


def represent_martingale(tree: ScenarioTree, node: int, h) -> np.ndarray:
    """Canonical Q-vector Z with Z.(e_i - p) = h_i on the support.

    ``h`` is indexed by state; entries off the support are ignored.
    """
    st = tree.stats(node)
    h = np.asarray(h, dtype=float)
    mask = st.p > 0
    h = np.where(mask, h, 0.0)
    mean = st.p @ h
    if abs(mean) > CENTER_TOL * max(1.0, np.abs(h).max()):
        raise NotCentered(f"increment has conditional mean {mean:.3e}", node=tree.ids[node])
    return st.psi_pinv @ (st.p * h)


def represent_increment(tree: ScenarioTree, values, node: int) -> np.ndarray:
    """Z for the martingale increment of ``values`` from ``node`` to its children."""
    st = tree.stats(node)
    cv = tree.child_values(values, node)
    return st.psi_pinv @ (st.p * (cv - st.p @ cv))


def m_norms(stats: NodeStats, z) -> tuple[float, float]:
    """(sqrt(z' psi z), sqrt(z' psi^+ z))."""
    z = np.asarray(z, dtype=float)
    a = max(float(z @ stats.psi @ z), 0.0)
    b = max(float(z @ stats.psi_pinv @ z), 0.0)
    return float(np.sqrt(a)), float(np.sqrt(b))


def martingale_increment(stats: NodeStats, z, state: int) -> float:
    """z' M_{t+1} on the event X_{t+1} = e_state."""
    z = np.asarray(z, dtype=float)
    return float(z[state] - z @ stats.p)


# ------------------------------------------------------------ stopping times
@dataclass(frozen=True)
class StoppingTime:
    """Stop/continue flags per node; terminal nodes always stop."""

    stop: np.ndarray = field(repr=False)

    @classmethod
    def from_flags(cls, tree: ScenarioTree, flags) -> "StoppingTime":
        flags = np.asarray(flags, dtype=bool)
        if flags.shape != (tree.n_nodes,):
            raise InvalidStoppingTime(f"expected {tree.n_nodes} flags, got shape {flags.shape}")
        flags = flags.copy()
        flags[tree.leaves] = True
        return cls(_frozen(flags))

    @classmethod
    def at_time(cls, tree: ScenarioTree, t: int) -> "StoppingTime":
        return cls.from_flags(tree, tree.time == t)

    def stopping_node(self, tree: ScenarioTree, leaf: int, start: int = 0) -> int:
        if self.stop.shape != (tree.n_nodes,):
            raise InvalidStoppingTime("stopping time belongs to a different tree")
        for n in tree.path(leaf, start):
            if self.stop[n]:
                return n
        raise InvalidStoppingTime(f"no stopping node on path to {tree.ids[leaf]}")

    def times(self, tree: ScenarioTree, start: int = 0) -> dict[int, int]:
        """Stopping time per leaf under ``start``."""
        return {lf: int(tree.time[self.stopping_node(tree, lf, start)]) for lf in tree.leaves_under(start)}


@dataclass(frozen=True)
class StopEval:
    leaves: tuple[int, ...]
    stop_nodes: tuple[int, ...]
    values: np.ndarray
    probs: np.ndarray
    expectation: float


def stop_time_eval(tree: ScenarioTree, process, tau: StoppingTime, start: int = 0) -> StopEval:
    """Value of ``process`` at the stopping node of each path through ``start``."""
    process = np.asarray(process, dtype=float)
    leaves = tuple(tree.leaves_under(start))
    stops = tuple(tau.stopping_node(tree, lf, start) for lf in leaves)
    vals = np.array([process[s] for s in stops])
    probs = np.array([tree.cond_prob(lf, start) for lf in leaves])
    return StopEval(leaves, stops, vals, probs, float(probs @ vals))


def enumerate_stopping_times(tree: ScenarioTree, start: int = 0) -> Iterator[StoppingTime]:
    """Every distinct stopping time of the subtree at ``start`` (stop sets, not labelings)."""

    def rules(n):
        if tree.is_terminal(n):
            yield (n,)
            return
        yield (n,)
        kids = tree.children(n)
        yield from _product_concat([list(rules(c)) for c in kids])

    for stop_set in rules(start):
        flags = np.zeros(tree.n_nodes, dtype=bool)
        flags[list(stop_set)] = True
        yield StoppingTime.from_flags(tree, flags)


def _product_concat(options):
    if not options:
        yield ()
        return
    head, rest = options[0], options[1:]
    for tail in _product_concat(rest):
        for h in head:
            yield h + tail


def count_stopping_times(tree: ScenarioTree, start: int = 0) -> int:
    def count(n):
        if tree.is_terminal(n):
            return 1
        out = 1
        for c in tree.children(n):
            out *= count(c)
        return out + 1

    return count(start)


def decision_nodes(tree: ScenarioTree, start: int = 0) -> list[int]:
    return [n for n in tree.subtree(start) if not tree.is_terminal(n)]
