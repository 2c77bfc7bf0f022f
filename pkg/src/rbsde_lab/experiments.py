"""Named experiments behind the command line: spec validation, runs and reports."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bsde import AffineDriver, ZeroDriver, solve_bsde
from .errors import ParseError, RbsdeLabError, TreeError, ValidationError
from .market import (
    MarketSpec,
    build_market,
    claim_payoff,
    crr_oracle,
    enumerate_selection_prices,
    price_american_bounds,
    price_european_bounds,
    recover_strategy,
    selection_count,
)
from .priors import PriorFamily, kappa_driver, kappa_limit, robust_expectation_oracle, scenario_driver
from .rbsde import k_increment_formula, optimal_stopping, solve_penalized, solve_rbsde
from .tree import ScenarioTree, build_tree, m_norms, node_list_problems

TASKS = (
    "solve_bsde",
    "solve_rbsde",
    "penalization",
    "robust_expectation",
    "price_european",
    "price_american",
    "ambiguity_stopping_demo",
)
DRIVERS = ("zero", "affine", "kappa_ignorance", "scenario", "custom")
PROCESS_TYPES = ("constant", "table", "state_sum", "time")
ENUM_CAP = 20_000


@dataclass
class ExperimentSpec:
    name: str
    task: str
    raw: dict = field(repr=False)
    tree: ScenarioTree | None = None
    terminal: np.ndarray | None = field(default=None, repr=False)
    obstacle: np.ndarray | None = field(default=None, repr=False)
    driver: object = None
    family: PriorFamily | None = None
    market: object = None
    payoff: np.ndarray | None = field(default=None, repr=False)
    base: Path = Path(".")


# ------------------------------------------------------------ loading
def _read_json(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return data


def _tree_problems(d: dict) -> list[str]:
    out = []
    if "nodes" in d:
        m = d.get("state_count")
        if m is None:
            try:
                m = max(int(c["state"]) for n in d["nodes"] for c in n.get("children", ()))
            except (ValueError, KeyError, TypeError):
                return ["tree: cannot infer state_count"]
        for _, msg, nid in node_list_problems(d["nodes"], m, d.get("horizon")):
            out.append(f"tree: {msg}" + (f" [node {nid}]" if nid else ""))
    elif "kernel" in d:
        k = np.asarray(d["kernel"], dtype=float)
        rows = k.reshape(-1, k.shape[-1]) if k.ndim else k.reshape(1, 1)
        for r, row in enumerate(rows):
            if np.any(row < 0):
                out.append(f"tree: kernel row {r + 1} has negative probabilities [nodes in state {r + 1}]")
            elif abs(row.sum() - 1.0) > 1e-9:
                out.append(
                    f"tree: kernel row {r + 1} sums to {row.sum():.12g}, not 1 "
                    f"[nodes in state {r + 1}]"
                )
        if "horizon" not in d:
            out.append("tree: kernel format needs a horizon")
    else:
        out.append("tree: needs either 'kernel' or 'nodes'")
    return out


def make_process(tree: ScenarioTree, d, what: str, leaves_only: bool = False) -> np.ndarray:
    """Process from its JSON description (types: constant, table, state_sum, time)."""
    if isinstance(d, (int, float)):
        d = {"type": "constant", "value": d}
    kind = d.get("type")
    n = tree.n_nodes
    if kind == "constant":
        return np.full(n, float(d["value"]))
    if kind == "time":
        return float(d.get("slope", 1.0)) * tree.time + float(d.get("offset", 0.0))
    if kind == "state_sum":
        w = np.asarray(d["weights"], dtype=float)
        if w.size != tree.state_count:
            raise ValidationError([f"{what}: state_sum needs {tree.state_count} weights, got {w.size}"])
        out = np.full(n, float(d.get("offset", 0.0)))
        for c in range(1, n):
            out[c] = out[tree.parent[c]] + w[tree.state[c]]
        return out
    if kind == "table":
        vals = d.get("values", {})
        need = tree.leaves if leaves_only else range(n)
        missing = [tree.ids[k] for k in need if tree.ids[k] not in vals]
        if missing:
            raise ValidationError([f"{what}: table misses nodes {', '.join(missing[:5])}"])
        out = np.zeros(n)
        for nid, v in vals.items():
            if nid not in tree.index:
                raise ValidationError([f"{what}: unknown node {nid}"])
            out[tree.index[nid]] = float(v)
        return out
    raise ValidationError([f"{what}: unknown process type {kind!r} (expected one of {', '.join(PROCESS_TYPES)})"])


def _coef(tree, value, what, trailing=()):
    if isinstance(value, dict):
        shape = (tree.n_nodes,) + trailing
        out = np.zeros(shape)
        for nid, v in value.items():
            if nid not in tree.index:
                raise ValidationError([f"{what}: unknown node {nid}"])
            out[tree.index[nid]] = v
        return out
    return value


def make_driver(tree: ScenarioTree, d: dict):
    kind = (d or {}).get("type", "zero")
    if kind == "zero":
        return ZeroDriver()
    if kind == "affine":
        m = tree.state_count
        drv = AffineDriver(
            tree,
            alpha=_coef(tree, d.get("alpha", 0.0), "driver.alpha"),
            beta=_coef(tree, d.get("beta", 0.0), "driver.beta"),
            gamma=_coef(tree, d.get("gamma", [0.0] * m), "driver.gamma", (m,)),
        )
        bad = [tree.ids[n] for n in range(tree.n_nodes) if not tree.is_terminal(n) and drv.beta[n] >= 1.0]
        if bad:
            raise ValidationError([f"driver: beta >= 1 makes y - f non-increasing [node {bad[0]}]"])
        if not drv.respects_equivalence:
            raise ValidationError(["driver: gamma must be a Q-vector (sum 0, zero off the support) at every node"])
        return drv
    if kind == "kappa_ignorance":
        return kappa_driver(tree, float(d.get("kappa", 0.0)), d.get("norm", "M"))
    if kind == "scenario":
        return scenario_driver(tree, float(d.get("kappa", 1.0)), d.get("scenarios", []))
    if kind == "custom":
        raise ValidationError(["driver: type 'custom' is reserved and cannot be loaded from a spec"])
    raise ValidationError([f"driver: unknown type {kind!r} (expected one of {', '.join(DRIVERS)})"])


def _market_from_json(tree, d):
    assets = d.get("assets") or []
    if not assets:
        raise ValidationError(["market: at least one asset is required"])
    spec = MarketSpec(
        r=d.get("r", 0.0),
        b=[a.get("b", 0.0) for a in assets],
        sigma=[a["sigma"] for a in assets],
        S0=[a.get("S0", 100.0) for a in assets],
    )
    return build_market(tree, spec)


def _claim(mkt, d, tree):
    kind = d.get("payoff", "call")
    if kind == "table":
        return make_process(tree, {"type": "table", "values": d.get("values", {})}, "claim",
                            leaves_only=d.get("type") == "european")
    return claim_payoff(mkt, kind, float(d.get("strike", 100.0)), int(d.get("asset", 0)))


def load_spec(path, data: dict | None = None) -> ExperimentSpec:
    """Parse and validate one experiment; every violation found is reported together."""
    path = Path(path)
    raw = _read_json(path) if data is None else data
    base = path.parent
    errors: list[str] = []
    task = raw.get("task")
    if task not in TASKS:
        errors.append(f"task: {task!r} is not one of {', '.join(TASKS)}")
    name = str(raw.get("name") or path.stem)
    spec = ExperimentSpec(name=name, task=task, raw=raw, base=base)
    if task == "ambiguity_stopping_demo":
        demo = raw.get("demo", {})
        for key in ("horizon", "mu", "sigma"):
            if key not in demo:
                errors.append(f"demo: missing {key}")
        if errors:
            raise ValidationError(errors)
        return spec

    tree_d = raw.get("tree")
    if isinstance(tree_d, str):
        try:
            tree_d = _read_json(base / tree_d)
        except ParseError as exc:
            errors.append(f"tree: {exc}")
            tree_d = None
    if not isinstance(tree_d, dict):
        errors.append("tree: missing tree description")
        raise ValidationError(errors)
    probs = _tree_problems(tree_d)
    errors.extend(probs)
    if probs:
        raise ValidationError(errors)
    try:
        tree = spec.tree = build_tree(tree_d)
    except TreeError as exc:
        errors.append(f"tree: {exc}" + (f" [node {exc.node}]" if exc.node else ""))
        raise ValidationError(errors) from None

    def attempt(fn):
        try:
            return fn()
        except ValidationError as exc:
            errors.extend(exc.errors)
        except RbsdeLabError as exc:
            errors.append(str(exc) + (f" [node {exc.node}]" if exc.node else ""))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"malformed field: {exc}")
        return None

    if task in ("solve_bsde", "solve_rbsde", "penalization", "robust_expectation"):
        if "terminal" not in raw:
            errors.append("terminal: missing")
        else:
            spec.terminal = attempt(lambda: make_process(tree, raw["terminal"], "terminal", leaves_only=True))
    if task in ("solve_bsde", "solve_rbsde", "penalization"):
        spec.driver = attempt(lambda: make_driver(tree, raw.get("driver", {"type": "zero"})))
    if task in ("solve_rbsde", "penalization"):
        if "obstacle" in raw and raw["obstacle"] is not None:
            spec.obstacle = attempt(lambda: make_process(tree, raw["obstacle"], "obstacle"))
        elif task == "penalization":
            errors.append("obstacle: penalization needs an obstacle")
    if task == "robust_expectation":
        if "prior" not in raw:
            errors.append("prior: missing prior family")
        else:
            spec.family = attempt(lambda: PriorFamily.from_json(raw["prior"]))
            if spec.family is not None:
                attempt(lambda: spec.family.driver(tree, raw.get("mode", "inf")))
    if task in ("price_european", "price_american"):
        mk = raw.get("market")
        if not isinstance(mk, dict):
            errors.append("market: missing market description")
        else:
            spec.market = attempt(lambda: _market_from_json(tree, mk))
            claim = mk.get("claim", {})
            if spec.market is not None:
                spec.payoff = attempt(lambda: _claim(spec.market, claim, tree))
            if task == "price_american" and "terminal_payoff" in claim and spec.payoff is not None:
                spec.terminal = attempt(lambda: make_process(tree, claim["terminal_payoff"], "terminal",
                                                             leaves_only=True))
                spec.obstacle = spec.payoff
    if task == "price_american" and spec.terminal is None and spec.payoff is not None:
        spec.terminal = spec.payoff
        spec.obstacle = spec.payoff
    if spec.obstacle is not None and spec.terminal is not None:
        lv = tree.leaves
        bad = [tree.ids[n] for n in lv if spec.obstacle[n] > spec.terminal[n] + 1e-12]
        if bad:
            errors.append(
                f"standard data: obstacle exceeds the terminal value (S_T > xi_T) at "
                f"{len(bad)} leaves [node {bad[0]}]"
            )
    if errors:
        raise ValidationError(errors)
    return spec


# ------------------------------------------------------------ reports
def fmt(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "nan"
    if x == 0.0:
        return "0"
    return f"{x:.12g}"


def _num(x):
    return float(fmt(x)) if isinstance(x, (float, np.floating)) and np.isfinite(x) else x


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    return obj


@dataclass
class Report:
    name: str
    summary: dict
    tables: dict  # file name -> (header, rows)
    oracle_ok: bool = True

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        for fname, (header, rows) in self.tables.items():
            lines = [",".join(header)]
            lines += [",".join(r) for r in rows]
            (out / fname).write_text("\n".join(lines) + "\n")
        (out / "summary.json").write_text(json.dumps(_clean(self.summary), indent=2) + "\n")


def scalar_table(tree: ScenarioTree, values, col: str = "value"):
    values = np.asarray(values, dtype=float)
    rows = [[tree.ids[n], str(int(tree.time[n])), fmt(values[n])] for n in range(tree.n_nodes)]
    return ["node", "t", col], rows


def vector_table(tree: ScenarioTree, values, prefix: str):
    values = np.asarray(values, dtype=float)
    header = ["node", "t"] + [f"{prefix}{j + 1}" for j in range(values.shape[1])]
    rows = []
    for n in range(tree.n_nodes):
        if tree.is_terminal(n):
            continue
        rows.append([tree.ids[n], str(int(tree.time[n]))] + [fmt(v) for v in values[n]])
    return header, rows


def _stop_summary(tree, rule, node=0):
    times = rule.times(tree, node)
    support = [lf for lf in times if tree.cond_prob(lf, node) > 0]
    distinct = sorted({times[lf] for lf in support})
    return {
        "tau_star": distinct[0] if len(distinct) == 1 else "path-dependent",
        "stop_times": {tree.ids[lf]: times[lf] for lf in support},
    }


def _oracle_mode(flag, feasible):
    if flag == "off":
        return False
    if flag == "on":
        return True
    return feasible


# ------------------------------------------------------------ tasks
def _run_bsde(spec, tol, oracle):
    tree = spec.tree
    sol = solve_bsde(tree, spec.terminal, spec.driver)
    summary = {"Y0": sol.Y[0]}
    return Report(spec.name, summary, {
        "Y.csv": scalar_table(tree, sol.Y, "Y"),
        "Z.csv": vector_table(tree, sol.Z, "z"),
    })


def _run_rbsde(spec, tol, oracle):
    from .errors import OracleTooLarge
    from .tree import decision_nodes

    tree = spec.tree
    sol = solve_rbsde(tree, spec.terminal, spec.driver, spec.obstacle)
    res = sol.residuals(tree, spec.terminal, spec.driver, spec.obstacle)
    n_dec = len(decision_nodes(tree))
    use = _oracle_mode(oracle, n_dec <= 20)
    if use and n_dec > 20:
        raise OracleTooLarge(f"{n_dec} decision nodes exceed the enumeration cap of 20")
    stop = optimal_stopping(tree, sol, spec.terminal, spec.driver, spec.obstacle, oracle=use)
    kdisc = k_increment_formula(tree, sol, spec.terminal, spec.driver, spec.obstacle)
    summary = {
        "Y0": sol.Y[0],
        "residuals": res,
        "k_formula_discrepancy": kdisc,
        "stopping": {
            "value": stop.value,
            "rule_value": stop.rule_value,
            "oracle_value": stop.oracle_value,
            "oracle_rules": stop.n_rules,
            "oracle_skipped": stop.skipped or (None if use else "disabled"),
            **_stop_summary(tree, stop.rule),
        },
    }
    ok = abs(stop.rule_value - stop.value) <= tol
    if stop.oracle_value is not None:
        gap = abs(stop.oracle_value - stop.value)
        summary["stopping"]["oracle_gap"] = gap
        ok = ok and gap <= tol
    return Report(spec.name, summary, {
        "Y.csv": scalar_table(tree, sol.Y, "Y"),
        "Z.csv": vector_table(tree, sol.Z, "z"),
        "dK.csv": scalar_table(tree, sol.dK, "dK"),
        "K.csv": scalar_table(tree, sol.K, "K"),
    }, oracle_ok=ok)


def _run_penalization(spec, tol, oracle):
    tree = spec.tree
    n_max = int(spec.raw.get("penalization", {}).get("n_max", 2 ** 14))
    pen = solve_penalized(tree, spec.terminal, spec.driver, spec.obstacle, n_max=n_max, strict=False)
    rows = [[str(n), fmt(d), fmt(s.Y[0])] for n, d, s in zip(pen.ns, pen.distances, pen.solutions)]
    summary = {
        "Y0": pen.limit.Y[0],
        "monotone": pen.monotone,
        "final_n": pen.ns[-1],
        "final_distance": pen.distances[-1],
        "distances_nonincreasing": bool(np.all(np.diff(pen.distances) <= 1e-15)),
    }
    return Report(spec.name, summary, {
        "penalization.csv": (["n", "sup_distance", "Y0"], rows),
        "Y.csv": scalar_table(tree, pen.limit.Y, "Y"),
        "Y_penalized.csv": scalar_table(tree, pen.solutions[-1].Y, "Y"),
        "dK_penalized.csv": scalar_table(tree, pen.dK[-1], "dK"),
    }, oracle_ok=pen.monotone)


def _run_robust(spec, tol, oracle):
    tree = spec.tree
    mode = spec.raw.get("mode", "inf")
    drv = spec.family.driver(tree, mode)
    sol = solve_bsde(tree, spec.terminal, drv)
    summary = {"mode": mode, "Y0": sol.Y[0]}
    ok = True
    if _oracle_mode(oracle, True):
        orc = robust_expectation_oracle(tree, spec.terminal, spec.family, 0, mode)
        gap = abs(orc.value - sol.Y[0])
        summary.update(oracle_value=orc.value, oracle_gap=gap, discretization_bound=orc.gap,
                       oracle_exact=orc.exact)
        ok = gap <= tol + orc.gap
    return Report(spec.name, summary, {
        "Y.csv": scalar_table(tree, sol.Y, "Y"),
        "Z.csv": vector_table(tree, sol.Z, "z"),
    }, oracle_ok=ok)


def _run_european(spec, tol, oracle):
    tree, mkt = spec.tree, spec.market
    eb = price_european_bounds(mkt, spec.payoff)
    summary = {"sub": eb.sub.Y[0], "super": eb.super.Y[0], "complete": mkt.is_complete()}
    ok = True
    count = selection_count(mkt)
    if _oracle_mode(oracle, 0 < count <= ENUM_CAP):
        prices = enumerate_selection_prices(mkt, spec.payoff, cap=max(ENUM_CAP, count))
        summary.update(oracle_min=prices.min(), oracle_max=prices.max(), oracle_selections=prices.size)
        ok = abs(prices.min() - eb.sub.Y[0]) <= tol and abs(prices.max() - eb.super.Y[0]) <= tol
    if mkt.is_complete() and tree.state_count == 2 and mkt.n_assets == 1:
        crr = crr_oracle(mkt, spec.payoff, american=False)
        summary["crr_oracle"] = crr[0]
        ok = ok and abs(crr[0] - eb.sub.Y[0]) <= tol and abs(crr[0] - eb.super.Y[0]) <= tol
    return Report(spec.name, summary, {
        "sub.csv": scalar_table(tree, eb.sub.Y, "Y"),
        "super.csv": scalar_table(tree, eb.super.Y, "Y"),
        "prices.csv": vector_table_all(tree, mkt.prices, "S"),
    }, oracle_ok=ok)


def vector_table_all(tree, values, prefix):
    values = np.asarray(values, dtype=float)
    header = ["node", "t"] + [f"{prefix}{j + 1}" for j in range(values.shape[1])]
    rows = [[tree.ids[n], str(int(tree.time[n]))] + [fmt(v) for v in values[n]] for n in range(tree.n_nodes)]
    return header, rows


def _run_american(spec, tol, oracle):
    tree, mkt = spec.tree, spec.market
    if spec.terminal is not spec.payoff:
        from .rbsde import first_hitting_rule
        from .market import MarketDriver
        sup = solve_rbsde(tree, spec.terminal, MarketDriver(mkt, "sup"), spec.obstacle)
        sub = solve_rbsde(tree, spec.terminal, MarketDriver(mkt, "inf"), spec.obstacle)
        rule = first_hitting_rule(tree, sup.Y, spec.obstacle)
    else:
        ab = price_american_bounds(mkt, spec.payoff)
        sup, sub, rule = ab.super, ab.sub, ab.exercise
    strat = recover_strategy(mkt, sup)
    summary = {
        "sub": sub.Y[0],
        "super": sup.Y[0],
        "complete": mkt.is_complete(),
        "exercise": _stop_summary(tree, rule),
        "strategy": {
            "identifiable_nodes": sum(s == "ok" for s in strat.status),
            "max_identity_residual": strat.max_residual(),
        },
    }
    ok = True
    complete = mkt.is_complete() and tree.state_count == 2 and mkt.n_assets == 1
    if _oracle_mode(oracle, complete):
        crr = crr_oracle(mkt, spec.payoff, american=True)
        summary["crr_oracle"] = crr[0]
        summary["crr_gap"] = max(abs(crr[0] - sup.Y[0]), abs(crr[0] - sub.Y[0]))
        ok = summary["crr_gap"] <= tol
    return Report(spec.name, summary, {
        "sub.csv": scalar_table(tree, sub.Y, "Y"),
        "super.csv": scalar_table(tree, sup.Y, "Y"),
        "super_dK.csv": scalar_table(tree, sup.dK, "dK"),
        "super_Z.csv": vector_table(tree, sup.Z, "z"),
        "prices.csv": vector_table_all(tree, mkt.prices, "S"),
    }, oracle_ok=ok)


# ------------------------------------------------------------ ambiguity demo
@dataclass
class DemoResult:
    tree: ScenarioTree
    asset: np.ndarray
    kappa: float
    value_plain: np.ndarray
    value_ambiguous: np.ndarray
    tau_plain: object
    tau_ambiguous: object
    worst_drift: float
    summary: dict


def ambiguity_demo(horizon: int, mu: float, sigma, p=(0.5, 0.5), S0: float = 100.0, kappa="auto",
                   norm: str = "M") -> DemoResult:
    """Stopping an asset S_{t+1} = S_t (1 + mu + sigma . M_{t+1}) under kappa-ignorance.

    The value is the reflected solution with obstacle S, terminal S_T and
    driver -kappa |z|; tau* is its first contact with S. ``kappa='auto'``
    picks 2 mu / |sigma|_M, capped at the admissible bound.
    """
    p = np.asarray(p, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    tree = ScenarioTree.from_kernel(int(horizon), p)
    S = np.zeros(tree.n_nodes)
    S[0] = S0
    for c in range(1, tree.n_nodes):
        a = int(tree.parent[c])
        inc = np.eye(tree.state_count)[tree.state[c]] - tree.law[a]
        S[c] = S[a] * (1.0 + mu + sigma @ inc)
    st = tree.stats(0)
    sig_norm, _ = m_norms(st, sigma)
    cap = kappa_limit(tree, 0, norm)
    if kappa == "auto":
        kappa = min(2.0 * mu / sig_norm, cap) if sig_norm > 0 else 0.0
    kappa = float(kappa)
    norm_sig = sig_norm if norm == "M" else m_norms(st, sigma)[1]
    worst = mu - kappa * norm_sig

    def solve(k):
        drv = kappa_driver(tree, k, norm)
        sol = solve_rbsde(tree, S, drv, S)
        stop = optimal_stopping(tree, sol, S, drv, S, oracle=False)
        return sol, _stop_summary(tree, stop.rule)

    plain, tau0 = solve(0.0)
    amb, tau1 = solve(kappa)
    summary = {
        "mu": mu,
        "sigma": sigma.tolist(),
        "kappa": kappa,
        "kappa_admissible_bound": cap,
        "norm": norm,
        "sigma_norm": norm_sig,
        "worst_case_drift": worst,
        "no_ambiguity": {"value": plain.Y[0], **tau0},
        "ambiguity": {"value": amb.Y[0], **tau1},
    }
    return DemoResult(tree, S, kappa, plain.Y, amb.Y, tau0["tau_star"], tau1["tau_star"], worst, summary)


def _run_demo(spec, tol, oracle):
    d = spec.raw["demo"]
    res = ambiguity_demo(int(d["horizon"]), float(d["mu"]), d["sigma"], d.get("p", [0.5, 0.5]),
                         float(d.get("S0", 100.0)), d.get("kappa", "auto"), d.get("norm", "M"))
    tree = res.tree
    ok = res.tau_plain == tree.horizon if res.summary["mu"] > 0 else True
    return Report(spec.name, res.summary, {
        "asset.csv": scalar_table(tree, res.asset, "S"),
        "value_no_ambiguity.csv": scalar_table(tree, res.value_plain, "U"),
        "value_ambiguity.csv": scalar_table(tree, res.value_ambiguous, "U"),
    }, oracle_ok=ok)


RUNNERS = {
    "solve_bsde": _run_bsde,
    "solve_rbsde": _run_rbsde,
    "penalization": _run_penalization,
    "robust_expectation": _run_robust,
    "price_european": _run_european,
    "price_american": _run_american,
    "ambiguity_stopping_demo": _run_demo,
}


def run_experiment(spec: ExperimentSpec, tolerance: float = 1e-9, oracle: str = "auto") -> Report:
    rep = RUNNERS[spec.task](spec, tolerance, oracle)
    rep.summary = {"name": spec.name, "task": spec.task, **rep.summary, "oracle_ok": rep.oracle_ok}
    return rep


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("RBSDE_LAB_THREADS", "1")))
    except ValueError:
        return 1
