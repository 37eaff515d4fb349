"""The diagnostic battery run by the CLI: one verdict per theorem-level check.

Each diagnostic takes a :class:`Battery` (grid, problem, solver options,
experiment parameters and, when needed, a stored solution) and returns an
:class:`Outcome` holding a verdict dict and zero or more curves. Thresholds
are the acceptance tolerances and are fixed here, not in the config.
"""

from __future__ import annotations

import zlib
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .analysis import (
    boundary_centers,
    boundary_concentration,
    boundary_fields,
    boundary_Lambda,
    bump,
    continuity_experiment,
    cutoff_pn,
    density_scan,
    el_lhs,
    el_scale,
    estimate_Lambda,
    faber_krahn_compare,
    flux_limit,
    interior_fields,
    interior_nodes,
    lipschitz_estimate,
    perimeter_vs_measure,
    reduced_boundary_fraction,
    residual_measure,
    weak_identity_P,
)
from .eigensolver import SolverOptions, solve_lambda1
from .fbsolver import (
    ISO_L1,
    SUPPORT_TAU,
    FbResult,
    ProblemSpec,
    b_gap,
    minimize_constrained,
    minimize_penalized,
    mu_star_selfconsistent,
)
from .fields import J_value, ScalarField, grad_J, grad_rayleigh, rayleigh_quotient
from .geometry import (
    ShapeMask,
    ball_with_cell_count,
    distance_to_complement,
    make_ball,
    make_rect,
    perimeter,
    support_mask,
    volume,
)
from .grid import GridSpec, make_grid
from .io import verdict


@dataclass
class Outcome:
    verdict: dict
    curves: list[tuple[str, list[str], list]] = field(default_factory=list)


@dataclass(frozen=True)
class Solution:
    u: ScalarField
    lambda_c: float


def seed_for(seed: int, component: str) -> int:
    """Child seed of ``seed`` for a named component (stable across runs and platforms)."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(component.encode())])
    return int(ss.generate_state(1)[0])


class Battery:
    def __init__(self, grid: GridSpec, p: float, q: float, c: float | None,
                 opts: SolverOptions, experiment: dict, solution: Solution | None = None):
        self.grid, self.p, self.q, self.c = grid, p, q, c
        self.opts = opts
        self.exp = experiment
        self.solution = solution

    @property
    def h(self) -> float:
        return max(self.grid.h)

    @property
    def spec(self) -> ProblemSpec:
        lam = self.solution.lambda_c if self.solution else 0.0
        return ProblemSpec(self.p, self.q, self.c, lambda_c=lam)

    def seed(self, name: str) -> int:
        return seed_for(self.opts.seed, name)

    @cached_property
    def mask(self) -> ShapeMask:
        return support_mask(self.solution.u, SUPPORT_TAU)

    @cached_property
    def measure(self):
        return residual_measure(self.solution.u, self.solution.lambda_c, self.p, self.q)

    @property
    def radii(self) -> list[float]:
        return [k * self.h for k in self.exp.get("radii_cells", [4, 6, 8, 11, 16])]

    @cached_property
    def centers(self) -> np.ndarray:
        n = self.exp.get("n_centers", 12)
        return boundary_centers(self.mask, n, 8 * self.h, seed=self.seed("centers"))

    @cached_property
    def boundary_phis(self):
        width = self.exp.get("field_width_cells", 8) * self.h
        return boundary_fields(self.mask, self.exp.get("n_fields", 8), width,
                               seed=self.seed("fields"))

    @cached_property
    def refined(self) -> FbResult:
        g = self.grid
        fine = make_grid(g.dim, g.extents, [2 * n - 1 for n in g.counts])
        return minimize_constrained(ProblemSpec(self.p, self.q, self.c), fine, opts=self.opts)


def _out(name, theorem, passed, metrics, curves=()):
    return Outcome(verdict(name, theorem, passed, metrics), list(curves))


# -- standalone checks (own grids) -------------------------------------------------------


def spectrum(b: Battery) -> Outcome:
    n = b.exp.get("spectrum_counts", 512)
    g = make_grid(1, [1.0], [n])
    res = solve_lambda1(ShapeMask(g, np.ones(g.cell_shape, bool)), 2, 2,
                        SolverOptions(diag_p2q2=True, tol=b.opts.tol))
    oracle = 2 * np.pi**2
    err = abs(res.lam - oracle) / oracle
    return _out("spectrum", "Dirichlet spectrum of the doubled Laplacian (p = q = 2 limit)",
                err < 5e-3, {"lambda": res.lam, "oracle": oracle, "rel_err": err,
                             "iterations": res.iterations})


def degeneracy(b: Battery) -> Outcome:
    n = b.exp.get("spectrum_counts", 512)
    g = make_grid(1, [1.0], [n])
    res = solve_lambda1(ShapeMask(g, np.ones(g.cell_shape, bool)), 3, 2, b.opts)
    err = abs(res.lam - np.pi**2) / np.pi**2
    return _out("degeneracy", "amplitude collapse of the quotient at q = 2",
                res.degenerate and err < 1e-2,
                {"lambda": res.lam, "oracle": np.pi**2, "rel_err": err,
                 "degenerate": res.degenerate, "iterations": res.iterations})


def _fd_rel_error(f: Callable[[np.ndarray], float], grad: np.ndarray, v: np.ndarray,
                  nodes, step=1e-5) -> float:
    fd = np.zeros_like(grad)
    for i in nodes:
        e = np.zeros_like(v)
        e.flat[i] = step
        fd.flat[i] = (f(v + e) - f(v - e)) / (2 * step)
    return float(np.max(np.abs(fd - grad)) / np.max(np.abs(grad)))


def gradient(b: Battery) -> Outcome:
    g = make_grid(1, [1.0], [32])
    rng = np.random.default_rng(b.seed("gradient"))
    nodes = np.flatnonzero(g.interior.ravel())
    worst = {}
    rows = []
    for p, q in [(2.5, 2), (3, 2), (3, 2.5), (4, 3)]:
        for k in range(10):
            v = np.where(g.interior, rng.uniform(0.2, 1.0, g.counts), 0.0)
            lam = float(rng.uniform(5, 50))
            u = ScalarField(g, v)
            er = _fd_rel_error(lambda w, p=p, q=q: rayleigh_quotient(ScalarField(g, w), p, q),
                               grad_rayleigh(u, p, q).values, v, nodes)
            ej = _fd_rel_error(lambda w, lam=lam, p=p, q=q: J_value(ScalarField(g, w), lam, p, q),
                               grad_J(u, lam, p, q).values, v, nodes)
            rows.append([p, q, k, er, ej])
            key = f"p{p}_q{q}"
            worst[key] = max(worst.get(key, 0.0), er, ej)
    top = max(worst.values())
    return _out("gradient", "first variation of the quotient and of the free-boundary functional",
                top < 1e-6, {"max_rel_err": top, "per_pair": worst},
                [("gradient.csv", ["p", "q", "field", "rel_err_R", "rel_err_J"], rows)])


def b_gap_check(b: Battery) -> Outcome:
    rng = np.random.default_rng(b.seed("b_gap"))
    n = 10_000
    x = rng.uniform(0.0, 10.0, n)
    x[x == 0] = 1e-300
    q = rng.uniform(2.0, 6.0, n)
    vals = b_gap(x, q)
    at_one = b_gap(np.ones(n), q)
    off = np.abs(x - 1) > 1e-6
    ok = bool(vals.min() >= 0 and np.all(np.abs(at_one) <= 1e-12) and np.all(vals[off] > 0))
    return _out("b_gap", "pointwise inequality x^q - 1 - q (x - 1) >= 0", ok,
                {"samples": n, "min": float(vals.min()), "max_at_one": float(np.abs(at_one).max())})


def fk_shapes(grid: GridSpec, area: float) -> dict[str, ShapeMask]:
    """Disk, square and 4:1 rectangle with identical cell counts, centered in the box."""
    h = grid.h[0]
    k = int(np.rint(np.sqrt(area) / (2 * h)))
    mid = [(n - 1) // 2 for n in grid.counts]
    sq = make_rect(grid, [(m - k) * h for m in mid], [(m + k) * h for m in mid])
    rect = make_rect(grid, [(mid[0] - 2 * k) * h, (mid[1] - (k + 1) // 2) * h],
                     [(mid[0] + 2 * k) * h, (mid[1] - (k + 1) // 2 + k) * h])
    # off-lattice center so the disk count is exact
    center = [m * h + 0.1 * h * (1 + a) for a, m in enumerate(mid)]
    disk = ball_with_cell_count(grid, center, sq.count)
    return {"disk": disk, "square": sq, "rect4": rect}


def faber_krahn(b: Battery) -> Outcome:
    fk = b.exp.get("faber_krahn", {})
    g = make_grid(2, fk.get("extents", [2.0, 2.0]), fk.get("counts", [129, 129]))
    shapes = fk_shapes(g, fk.get("area", 0.5))
    ranking = faber_krahn_compare(shapes, b.p, b.q, b.opts)
    lam = dict(ranking)
    ok = lam["disk"] < lam["square"] < lam["rect4"]
    return _out("faber_krahn", "the ball minimizes the first eigenvalue at fixed volume", ok,
                {"lambda": lam, "cells": {k: m.count for k, m in shapes.items()},
                 "ranking": [n for n, _ in ranking]},
                [("faber_krahn.csv", ["shape", "lambda"], [[n, v] for n, v in ranking])])


def monotonicity(b: Battery) -> Outcome:
    g = b.grid
    widths = b.exp.get("monotonicity_widths", [0.5, 0.75, 1.0])
    lo = [0.25 * L for L in g.extents]
    lams = []
    for w in widths:
        hi = [lo[0] + w] + [lo[a] + 0.5 for a in range(1, g.dim)]
        lams.append(solve_lambda1(make_rect(g, lo, hi), b.p, b.q, b.opts).lam)
    ok = all(lams[i + 1] <= lams[i] * (1 + 1e-3) for i in range(len(lams) - 1))
    return _out("monotonicity", "the eigenvalue is nonincreasing under inclusion", ok,
                {"widths": widths, "lambda": lams},
                [("monotonicity.csv", ["width", "lambda"], [list(r) for r in zip(widths, lams)])])


def continuity(b: Battery) -> Outcome:
    cfg = b.exp.get("continuity", {})
    g = b.grid
    center = cfg.get("center", [0.5 * L + 0.1 * g.h[0] for L in g.extents])
    r = cfg.get("radius", 0.4)
    ns = cfg.get("n", [1, 2, 3, 4, 5, 6])
    base = make_ball(g, center, r)
    masks = [make_ball(g, center, r * (1 - 2.0**-n)) for n in ns]
    rows = continuity_experiment(base, masks, b.p, b.q, b.opts)
    lam0 = solve_lambda1(base, b.p, b.q, b.opts).lam
    rel = [row.gap / lam0 for row in rows]
    monotone = all(rel[i] <= rel[i + 1] * (1 + 1e-9) + 1e-12 for i in range(len(rel) - 1))
    ok = monotone and rel[0] < 1e-2
    return _out("continuity", "the eigenvalue is continuous in the Hausdorff complementary topology",
                ok, {"lambda_base": lam0, "monotone": monotone, "closest_rel_gap": rel[0],
                     "rel_gaps": rel, "distances": [row.distance for row in rows]},
                [("continuity.csv", ["d_hc", "gap", "rel_gap", "lambda"],
                  [[row.distance, row.gap, rg, row.lam] for row, rg in zip(rows, rel)])])


# -- checks on a stored solution ---------------------------------------------------------


def equivalence(b: Battery) -> Outcome:
    lam_s = solve_lambda1(b.mask, b.p, b.q, b.opts).lam
    gap = abs(b.solution.lambda_c - lam_s) / lam_s
    tol = 1e-2 if b.grid.dim == 1 else 2e-2
    return _out("equivalence", "the support of the state minimizer solves the shape problem",
                gap < tol, {"lambda_c": b.solution.lambda_c, "lambda_support": lam_s, "gap": gap,
                            "support_volume": volume(b.mask), "tolerance": tol})


def positivity(b: Battery) -> Outcome:
    w = b.measure.weights
    wmax = float(w.max())
    inner = interior_nodes(b.mask, 3.0)
    inner_max = float(np.abs(w[inner]).max()) if inner.any() else 0.0
    ok = wmax > 0 and w.min() >= -1e-8 * wmax and inner_max <= 1e-6 * wmax
    return _out("positivity", "the residual measure is a positive Radon measure on the free boundary",
                ok, {"min_over_max": float(w.min()) / wmax if wmax > 0 else None,
                     "interior_over_max": inner_max / wmax if wmax > 0 else None,
                     "total": b.measure.total,
                     "concentration_2cells": boundary_concentration(b.measure, b.mask)})


def growth(b: Battery) -> Outcome:
    rep = perimeter_vs_measure(b.mask, b.measure, b.centers, b.radii)
    target = b.grid.dim - 1
    sp = rep.perimeter_fit.slope
    sm = rep.measure_fit.slope if rep.measure_fit is not None else None
    enough = len(b.centers) >= 10 or b.grid.dim == 1
    ok = (enough and sm is not None and abs(sm - target) <= 0.3 and abs(sp - target) <= 0.3
          and np.isfinite(rep.max_ratio))
    mvals = rep.measure_fit.values if rep.measure_fit is not None else [0.0] * len(b.radii)
    rows = [[r, pm, mm] for r, pm, mm in zip(b.radii, rep.perimeter_fit.values, mvals)]
    return _out("growth", "residual measure and relative perimeter grow like r^(d-1)", ok,
                {"measure_slope": sm, "perimeter_slope": sp, "target": target,
                 "max_ratio": rep.max_ratio, "centers": len(b.centers)},
                [("growth.csv", ["r", "mean_perimeter", "mean_measure"], rows)])


def density(b: Battery) -> Outcome:
    rows = density_scan(b.mask, b.radii)
    ok = all(r.C1 >= 0.05 and r.C2 <= 0.95 and 0 < r.comp_min and r.comp_max < 1 for r in rows)
    return _out("density", "two-sided volume density bounds at the free boundary", ok,
                {"C1": min(r.C1 for r in rows), "C2": max(r.C2 for r in rows)},
                [("density.csv", ["r", "C1", "C2", "comp_min", "comp_max"],
                  [[r.r, r.C1, r.C2, r.comp_min, r.comp_max] for r in rows])])


def reduced_boundary(b: Battery) -> Outcome:
    frac = reduced_boundary_fraction(b.mask, 8 * b.h)
    return _out("reduced_boundary", "the free boundary is reduced boundary up to a null set",
                frac >= 0.95, {"fraction": frac, "r": 8 * b.h})


def isoperimetric(b: Battery) -> Outcome:
    d = b.grid.dim
    P = perimeter(b.mask)
    bound = ISO_L1[d] * volume(b.mask) ** ((d - 1) / d)
    return _out("isoperimetric", "discrete (l1) isoperimetric inequality on the support",
                P >= bound * (1 - 1e-12), {"perimeter": P, "bound": bound})


def euler_lagrange(b: Battery) -> Outcome:
    spec = b.spec
    u = b.solution.u
    est = estimate_Lambda(u, b.boundary_phis, spec)
    inner = interior_fields(b.mask, b.exp.get("n_interior_fields", 4), 2 * b.h,
                            seed=b.seed("interior"))
    rel = [abs(el_lhs(u, f, spec.lambda_c, b.p, b.q)) / el_scale(u, f, spec.lambda_c, b.p, b.q)
           for f in inner]
    inner_max = max(rel) if rel else None
    ok = (est.Lambda > 0 and est.spread < 0.1 and len(est.ratios) >= 8
          and inner_max is not None and inner_max <= 1e-6)
    return _out("euler_lagrange", "domain-variation identity with a positive multiplier", ok,
                {"Lambda": est.Lambda, "spread": est.spread, "fields": est.used,
                 "Lambda_boundary": boundary_Lambda(u, b.mask, b.p),
                 "interior_max_rel": inner_max},
                [("euler_lagrange.csv", ["field", "ratio"],
                  [[k, r] for k, r in enumerate(est.ratios)])])


def flux(b: Battery) -> Outcome:
    eps_cells = b.exp.get("flux_eps_cells", [16, 8, 4])
    eps = [k * b.h for k in eps_cells]
    spec = b.spec
    est = estimate_Lambda(b.solution.u, b.boundary_phis, spec)
    rows, ratios = [], []
    for k, phi in enumerate(b.boundary_phis):
        curve = flux_limit(b.solution.u, phi, spec, est.Lambda, eps)
        rows += [[k, e, v] for e, v in zip(curve.eps, curve.values)]
        top = abs(curve.values[int(np.argmax(curve.eps))])
        low = abs(curve.values[int(np.argmin(curve.eps))])
        ratios.append(low / top if top > 0 else np.inf)
    worst = max(ratios)
    return _out("flux", "boundary flux identity in the very weak sense", worst <= 0.1,
                {"worst_ratio": worst, "ratios": ratios, "Lambda": est.Lambda},
                [("flux.csv", ["field", "eps", "value"], rows)])


def weak_identity(b: Battery) -> Outcome:
    dist = distance_to_complement(b.mask)
    idx = np.unravel_index(int(np.argmax(dist)), dist.shape)
    x = b.grid.node_coords()
    center = [float(x[a][idx]) for a in range(b.grid.dim)]
    Psi = bump(center, 0.5 * float(dist.max()))
    res = {}
    for name, P in (("identity", lambda r: np.asarray(r, dtype=float)),
                    ("cutoff", cutoff_pn(1.0 / b.h))):
        w = weak_identity_P(b.solution.u, P, Psi, b.spec)
        res[name] = {"defect": w.defect, "scale": w.scale, "rel": abs(w.defect) / w.scale}
    ok = all(r["rel"] <= 1e-6 for r in res.values())
    return _out("weak_identity", "state equation tested with P(u) Psi, P(0) = 0", ok, res)


def lipschitz(b: Battery) -> Outcome:
    margin = b.exp.get("lipschitz_margin_cells", 2) * b.h
    coarse = lipschitz_estimate(b.solution.u, margin)
    fine = lipschitz_estimate(b.refined.u, margin)
    rel = abs(coarse - fine) / max(coarse, fine)
    return _out("lipschitz", "the state minimizer is locally Lipschitz", rel < 0.1,
                {"L_h": coarse, "L_h2": fine, "rel_diff": rel, "margin": margin})


def refinement(b: Battery) -> Outcome:
    lam, lam2 = b.solution.lambda_c, b.refined.lambda_c
    rel = abs(lam - lam2) / lam2
    return _out("refinement", "mesh-refinement stability of the optimal eigenvalue", rel < 2e-2,
                {"lambda_h": lam, "lambda_h2": lam2, "rel_diff": rel})


def penalization(b: Battery) -> Outcome:
    spec = b.spec
    u0 = b.solution.u
    run = mu_star_selfconsistent(spec, b.grid, u0, b.opts)
    one_cell = b.grid.cell_volume
    final = run.result
    J_err = abs(final.J_value - spec.lambda_c) / spec.lambda_c
    rows = []
    for f in b.exp.get("penalization_sweep", [0.01, 0.1, 1.0, 2.0]):
        r = minimize_penalized(spec.with_(mu=f * run.mu_star), b.grid, init=u0, opts=b.opts)
        rows.append([f, f * run.mu_star, r.support_volume, r.J_value])
    top_ok = rows[-1][2] <= spec.c + one_cell
    ok = final.support_volume <= spec.c + one_cell and J_err < 1e-2 and top_ok
    return _out("penalization", "exact penalization of the volume constraint above a threshold",
                ok, {"mu_star": run.mu_star, "mu": run.mu, "support_volume": final.support_volume,
                     "J_mu": final.J_value, "lambda_c": spec.lambda_c, "rel_err": J_err,
                     "rounds": [list(r) for r in run.rounds]},
                [("penalization.csv", ["factor", "mu", "support_volume", "J_mu"], rows)])


STANDALONE: dict[str, Callable[[Battery], Outcome]] = {
    "spectrum": spectrum,
    "degeneracy": degeneracy,
    "gradient": gradient,
    "b_gap": b_gap_check,
    "faber_krahn": faber_krahn,
    "monotonicity": monotonicity,
    "continuity": continuity,
}

ON_SOLUTION: dict[str, Callable[[Battery], Outcome]] = {
    "equivalence": equivalence,
    "positivity": positivity,
    "growth": growth,
    "density": density,
    "reduced_boundary": reduced_boundary,
    "isoperimetric": isoperimetric,
    "euler_lagrange": euler_lagrange,
    "flux": flux,
    "weak_identity": weak_identity,
    "lipschitz": lipschitz,
    "refinement": refinement,
    "penalization": penalization,
}

ALL = {**STANDALONE, **ON_SOLUTION}
