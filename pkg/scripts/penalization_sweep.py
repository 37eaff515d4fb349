"""Support volume and J_mu of the penalized minimizer as mu sweeps past the threshold."""

import argparse

from freeshape.eigensolver import SolverOptions
from freeshape.fbsolver import (
    ProblemSpec,
    minimize_constrained,
    minimize_penalized,
    mu_star_selfconsistent,
)
from freeshape.grid import make_grid


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=257, help="nodes on (0, 2)")
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--p", type=float, default=4.0)
    ap.add_argument("--q", type=float, default=3.0)
    ap.add_argument("--factors", type=float, nargs="+", default=[0.01, 0.1, 0.5, 1.0, 2.0, 4.0])
    args = ap.parse_args(argv)
    g = make_grid(1, [2.0], [args.n])
    opts = SolverOptions()
    base = minimize_constrained(ProblemSpec(args.p, args.q, args.c), g, opts=opts)
    spec = ProblemSpec(args.p, args.q, args.c, lambda_c=base.lambda_c)
    run = mu_star_selfconsistent(spec, g, base.u, opts)
    print(f"lambda_c = {base.lambda_c:.5f}, self-consistent mu* = {run.mu_star:.2f}")
    print(f"{'factor':>7s} {'mu':>12s} {'|supp|':>8s} {'J_mu':>12s}")
    for f in args.factors:
        r = minimize_penalized(spec.with_(mu=f * run.mu_star), g, init=base.u, opts=opts)
        print(f"{f:7.2f} {f * run.mu_star:12.2f} {r.support_volume:8.4f} {r.J_value:12.5f}")


if __name__ == "__main__":
    main()
