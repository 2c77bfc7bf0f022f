"""Stopping a rising asset with and without kappa-ignorance."""
import argparse
import json

from rbsde_lab.experiments import ambiguity_demo


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=int, default=4)
    ap.add_argument("--mu", type=float, default=0.05)
    ap.add_argument("--sigma", type=float, nargs="+", default=[0.2, -0.2])
    ap.add_argument("--p", type=float, nargs="+", default=[0.5, 0.5])
    ap.add_argument("--kappa", default="auto", help="a number or 'auto'")
    args = ap.parse_args()
    kappa = args.kappa if args.kappa == "auto" else float(args.kappa)
    for k in (0.0, kappa):
        res = ambiguity_demo(args.horizon, args.mu, args.sigma, args.p, kappa=k)
        print(f"kappa={res.kappa:.4g}  worst-case drift={res.worst_drift:.4g}  "
              f"tau*={res.tau_ambiguous}  U_0={res.value_ambiguous[0]:.6f}")
    print(json.dumps(res.summary, indent=2, default=float))


if __name__ == "__main__":
    main()
