"""Command line: ``rbsde-lab solve SPEC`` and ``rbsde-lab validate SPEC``.

Exit codes: 0 success, 2 validation or parse error, 3 solver error,
4 oracle mismatch beyond the tolerance.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .errors import ParseError, RbsdeLabError, ValidationError
from .experiments import _read_json, load_spec, run_experiment, thread_cap

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_ORACLE = 0, 2, 3, 4


def _load_all(path: Path) -> list:
    """One spec, or a batch file {"experiments": [spec, ...]}."""
    raw = _read_json(path)
    if "experiments" in raw:
        items = raw["experiments"]
        if not isinstance(items, list) or not items:
            raise ValidationError(["experiments: expected a nonempty list"])
        specs, errors = [], []
        for k, item in enumerate(items):
            try:
                if isinstance(item, str):
                    sub = path.parent / item
                    specs.append(load_spec(sub))
                else:
                    specs.append(load_spec(path, data=item))
            except ValidationError as exc:
                errors.extend(f"experiments[{k}]: {e}" for e in exc.errors)
            except ParseError as exc:
                errors.append(f"experiments[{k}]: {exc}")
        if errors:
            raise ValidationError(errors)
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ValidationError(["experiments: names must be unique"])
        return specs
    return [load_spec(path, data=raw)]


def _print_errors(exc) -> None:
    errs = exc.errors if isinstance(exc, ValidationError) else [str(exc)]
    for e in errs:
        print(f"error: {e}", file=sys.stderr)


def cmd_validate(args) -> int:
    try:
        specs = _load_all(Path(args.spec))
    except (ValidationError, ParseError) as exc:
        _print_errors(exc)
        return EXIT_VALIDATION
    for s in specs:
        print(f"ok: {s.name} ({s.task})")
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        specs = _load_all(Path(args.spec))
    except (ValidationError, ParseError) as exc:
        _print_errors(exc)
        return EXIT_VALIDATION
    out = Path(args.out)
    batch = len(specs) > 1

    def run(spec):
        return run_experiment(spec, args.tolerance, args.oracle)

    try:
        with ThreadPoolExecutor(max_workers=min(thread_cap(), len(specs))) as pool:
            reports = list(pool.map(run, specs))
    except RbsdeLabError as exc:
        node = f" [node {exc.node}]" if exc.node is not None else ""
        print(f"solver error: {type(exc).__name__}: {exc}{node}", file=sys.stderr)
        return EXIT_SOLVER
    code = EXIT_OK
    for rep in reports:
        rep.write(out / rep.name if batch else out)
        status = "ok" if rep.oracle_ok else "ORACLE MISMATCH"
        print(f"{rep.name}: {status}")
        if not rep.oracle_ok:
            code = EXIT_ORACLE
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rbsde-lab", description="BSDE and reflected BSDE experiments on scenario trees")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run an experiment spec (or a batch of them)")
    s.add_argument("spec")
    s.add_argument("--out", default="out", help="output directory (default: out)")
    s.add_argument("--tolerance", type=float, default=1e-9)
    s.add_argument("--oracle", choices=("on", "off", "auto"), default="auto")
    s.set_defaults(func=cmd_solve)
    v = sub.add_parser("validate", help="check a spec without solving")
    v.add_argument("spec")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
