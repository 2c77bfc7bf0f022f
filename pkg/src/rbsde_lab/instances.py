"""Seeded random instances for property tests and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bsde import AffineDriver
from .tree import ScenarioTree


@dataclass
class InstanceConfig:
    max_nodes: int = 60
    max_horizon: int = 5
    state_counts: tuple = (2, 3)
    zero_child_rate: float = 0.15  # chance that a node gets one zero-probability child
    max_beta: float = 0.9


def random_tree(rng: np.random.Generator, cfg: InstanceConfig | None = None,
                horizon: int | None = None, m: int | None = None) -> ScenarioTree:
    """Random non-recombining tree with at most ``cfg.max_nodes`` nodes."""
    cfg = cfg or InstanceConfig()
    m = int(m or rng.choice(cfg.state_counts))
    T = int(horizon or rng.integers(1, cfg.max_horizon + 1))
    for _ in range(200):
        nodes = _try_tree(rng, cfg, T, m)
        if nodes is not None:
            return ScenarioTree.from_nodes(nodes, m, T)
    # fall back to a single path, always within budget
    return ScenarioTree.from_kernel(T, np.eye(m)[0])


def _try_tree(rng, cfg, T, m):
    nodes = [{"id": "r", "time": 0, "children": []}]
    frontier = [0]
    for t in range(T):
        nxt = []
        for k in frontier:
            size = int(rng.integers(1, m + 1))
            states = np.sort(rng.choice(m, size=size, replace=False))
            probs = rng.dirichlet(np.ones(size))
            if size >= 2 and rng.random() < cfg.zero_child_rate:
                probs[int(rng.integers(size))] = 0.0
                probs /= probs.sum()
            for s, pr in zip(states, probs):
                cid = f"{nodes[k]['id']}.{s + 1}"
                nodes[k]["children"].append({"state": int(s) + 1, "prob": float(pr), "id": cid})
                nodes.append({"id": cid, "time": t + 1, "children": []})
                nxt.append(len(nodes) - 1)
            if len(nodes) > cfg.max_nodes:
                return None
        frontier = nxt
    # normalise rounding so each law sums to 1 exactly enough
    for d in nodes:
        kids = d["children"]
        if kids:
            tot = sum(c["prob"] for c in kids)
            for c in kids:
                c["prob"] /= tot
    return nodes


def random_q_vector(rng: np.random.Generator, p: np.ndarray, scale: float | None = None) -> np.ndarray:
    """gamma = s (q - p) for a random law q on the support; p + gamma stays a law."""
    sup = np.flatnonzero(p > 0)
    q = np.zeros_like(p)
    q[sup] = rng.dirichlet(np.ones(sup.size))
    s = rng.random() if scale is None else scale
    return s * (q - p)


def random_affine_driver(rng: np.random.Generator, tree: ScenarioTree, max_beta: float = 0.9,
                         alpha_scale: float = 1.0) -> AffineDriver:
    n, m = tree.n_nodes, tree.state_count
    alpha = alpha_scale * rng.normal(size=n)
    beta = rng.uniform(-max_beta, max_beta, size=n)
    gamma = np.zeros((n, m))
    for node in range(n):
        if not tree.is_terminal(node):
            gamma[node] = random_q_vector(rng, tree.law[node])
    return AffineDriver(tree, alpha=alpha, beta=beta, gamma=gamma)


def random_terminal(rng: np.random.Generator, tree: ScenarioTree) -> np.ndarray:
    xi = np.zeros(tree.n_nodes)
    xi[tree.leaves] = rng.normal(size=tree.leaves.size) * 2.0
    return xi


def random_obstacle(rng: np.random.Generator, tree: ScenarioTree, xi: np.ndarray) -> np.ndarray:
    """Obstacle with S_T <= xi, so the data are standard."""
    S = rng.normal(size=tree.n_nodes) * 2.0
    S[tree.leaves] = xi[tree.leaves] - rng.random(tree.leaves.size)
    return S


@dataclass
class RbsdeInstance:
    tree: ScenarioTree
    xi: np.ndarray
    driver: AffineDriver
    obstacle: np.ndarray


def random_rbsde_instance(seed: int, cfg: InstanceConfig | None = None) -> RbsdeInstance:
    cfg = cfg or InstanceConfig()
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, cfg)
    xi = random_terminal(rng, tree)
    drv = random_affine_driver(rng, tree, cfg.max_beta)
    return RbsdeInstance(tree, xi, drv, random_obstacle(rng, tree, xi))
