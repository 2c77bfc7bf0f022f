"""Penalized solutions Y^n for n = 2^k on random instances: distance to Y and n * distance."""
import argparse

import numpy as np

from rbsde_lab.instances import random_rbsde_instance
from rbsde_lab.rbsde import solve_penalized


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--kmax", type=int, default=20)
    args = ap.parse_args()
    ns = [2 ** k for k in range(args.kmax + 1)]
    for seed in range(args.seeds):
        inst = random_rbsde_instance(seed)
        pen = solve_penalized(inst.tree, inst.xi, inst.driver, inst.obstacle, ns=ns, strict=False)
        print(f"seed {seed}: {inst.tree.n_nodes} nodes, T={inst.tree.horizon}, monotone={pen.monotone}")
        for n, d in zip(pen.ns, pen.distances):
            print(f"  n={n:>8d}  sup|Y^n - Y|={d:.3e}  n*dist={n * d:.4g}")
        scaled = np.asarray(pen.distances) * np.asarray(pen.ns, dtype=float)
        print(f"  limit of n*dist ~ {scaled[-1]:.4g}: 1e-6 needs n ~ {scaled[-1] / 1e-6:.3g}")


if __name__ == "__main__":
    main()
