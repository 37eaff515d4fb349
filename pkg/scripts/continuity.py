"""Eigenvalue gaps for disks shrinking to a base disk, against their complementary distance."""

import argparse

from freeshape.analysis import continuity_experiment
from freeshape.eigensolver import SolverOptions, solve_lambda1
from freeshape.geometry import make_ball
from freeshape.grid import make_grid


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=129, help="nodes per axis on (0, 2)^2")
    ap.add_argument("--radius", type=float, default=0.4)
    ap.add_argument("--levels", type=int, default=6)
    ap.add_argument("--p", type=float, default=3.0)
    ap.add_argument("--q", type=float, default=2.5)
    args = ap.parse_args(argv)
    g = make_grid(2, [2.0, 2.0], [args.n, args.n])
    center = [1.0031, 0.9987]  # off-lattice, avoids ties on the digitized boundary
    base = make_ball(g, center, args.radius)
    opts = SolverOptions()
    lam0 = solve_lambda1(base, args.p, args.q, opts).lam
    shrunk = [make_ball(g, center, args.radius * (1 - 2.0**-k)) for k in range(1, args.levels + 1)]
    print(f"lambda(base) = {lam0:.4f}, h = {g.h[0]:.5f}")
    print(f"{'d_hc':>10s} {'lambda':>12s} {'rel_gap':>10s}")
    for row in continuity_experiment(base, shrunk, args.p, args.q, opts):
        print(f"{row.distance:10.5f} {row.lam:12.4f} {row.gap / lam0:10.4%}")


if __name__ == "__main__":
    main()
