"""Discrete-time Skorohod reflection at zero.

Works with any ordered numeric type (int, Fraction, float), so integer or
rational inputs give exact outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import NegativeStart


@dataclass(frozen=True)
class SkorohodSolution:
    v: tuple
    g: tuple

    def violations(self, y: Sequence) -> list[str]:
        """Invariants that fail for input ``y`` (empty when the pair is a solution)."""
        out = []
        v, g = self.v, self.g
        if len(v) != len(y) or len(g) != len(y):
            return ["length mismatch"]
        if any(v[t] != y[t] + g[t] for t in range(len(y))):
            out.append("v != y + g")
        if any(x < 0 for x in v):
            out.append("v negative")
        if g[0] != 0:
            out.append("g(0) != 0")
        if any(g[t] < g[t - 1] for t in range(1, len(g))):
            out.append("g decreasing")
        if any(v[t] * (g[t] - g[t - 1]) != 0 for t in range(1, len(g))):
            out.append("complementarity")
        return out


def solve_skorohod(y: Sequence) -> SkorohodSolution:
    """Minimal nondecreasing push g keeping v = y + g nonnegative.

    g(t) = max_{s <= t} max(-y(s), 0); complementarity then holds term by term.
    """
    y = list(y)
    if not y:
        raise ValueError("empty sequence")
    if y[0] < 0:
        raise NegativeStart(f"y(0) = {y[0]} < 0")
    zero = y[0] - y[0]
    g, run = [], zero
    for val in y:
        run = max(run, -val, zero)
        g.append(run)
    v = [a + b for a, b in zip(y, g)]
    return SkorohodSolution(tuple(v), tuple(g))
