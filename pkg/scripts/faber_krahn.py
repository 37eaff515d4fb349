"""Compare the first eigenvalue of a disk, a square and a 4:1 rectangle of equal cell count."""

import argparse

from freeshape.analysis import faber_krahn_compare
from freeshape.diagnostics import fk_shapes
from freeshape.eigensolver import SolverOptions
from freeshape.grid import make_grid


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=129, help="nodes per axis on (0, 2)^2")
    ap.add_argument("--area", type=float, default=0.5)
    ap.add_argument("--p", type=float, default=3.0)
    ap.add_argument("--q", type=float, default=2.5)
    args = ap.parse_args(argv)
    g = make_grid(2, [2.0, 2.0], [args.n, args.n])
    shapes = fk_shapes(g, args.area)
    print(f"{'shape':8s} {'cells':>6s} {'lambda':>12s}")
    for name, lam in faber_krahn_compare(shapes, args.p, args.q, SolverOptions()):
        print(f"{name:8s} {shapes[name].count:6d} {lam:12.4f}")


if __name__ == "__main__":
    main()
