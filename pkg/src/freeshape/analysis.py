"""Diagnostics that turn the qualitative statements about optimal shapes into numbers.

Each function works on a solver output (a field, its support mask, the
multiplier lambda_c) and returns plain data; pass/fail thresholds live with
the callers.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .eigensolver import SolverOptions, solve_lambda1
from .errors import (
    DegenerateFields,
    EmptyWindow,
    NoBoundary,
    VolumeMismatch,
)
from .fbsolver import SUPPORT_TAU, ProblemSpec, minimize_constrained, support_volume
from .fields import (
    ScalarField,
    _sample_weight,
    corner_gradients,
    corner_positions,
    corner_values,
    flux_weights,
    grad_J,
)
from .geometry import (
    BallSpec,
    ShapeMask,
    boundary_cells,
    cell_center_points,
    density_ratios_at_cells,
    distance_to_complement,
    hausdorff_comp_distance,
    outward_normals,
    perimeter,
    reduced_boundary_proxy,
    support_mask,
)
from .grid import GridSpec, corner_offsets, edge_slices

# -- residual measure -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasureField:
    grid: GridSpec
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.shape != self.grid.counts or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and node-shaped")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def ball_mass(self, center, r: float) -> float:
        x = self.grid.node_coords()
        d2 = sum((x[a] - center[a]) ** 2 for a in range(self.grid.dim))
        return float(self.weights[d2 < r * r].sum())


def residual_measure(u: ScalarField, lambda_c: float, p: float, q: float) -> MeasureField:
    """mu_1(phi_i) = -int (|grad u|^(p-2)+1) grad u . grad phi_i + lambda_c int u^(q-1) phi_i."""
    return MeasureField(u.grid, -grad_J(u, lambda_c, p, q).values)


def boundary_concentration(m: MeasureField, mask: ShapeMask, cells: float = 2.0) -> float:
    """Fraction of |mu_1| carried by nodes within ``cells`` widths of the free boundary."""
    grid = mask.grid
    inside = distance_to_complement(mask)
    outside = distance_to_complement(~mask)
    dist = np.maximum(inside, outside)
    near = dist <= cells * max(grid.h) + 1e-12
    tot = np.abs(m.weights).sum()
    return float(np.abs(m.weights[near]).sum() / tot) if tot > 0 else 0.0


def interior_nodes(mask: ShapeMask, cells: float) -> np.ndarray:
    """Nodes at least ``cells`` widths inside the mask."""
    return distance_to_complement(mask) >= cells * max(mask.grid.h) - 1e-12


# -- growth fits --------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthFit:
    radii: tuple[float, ...]
    values: tuple[float, ...]
    slope: float
    constant: float
    slopes: tuple[float, ...] = field(default=(), repr=False)  # per center, when averaged

    def __post_init__(self):
        r = np.asarray(self.radii)
        if np.any(r <= 0) or np.any(np.diff(r) <= 0):
            raise ValueError("radii must be positive and strictly increasing")


def fit_loglog(radii, values) -> tuple[float, float]:
    """Least-squares slope and constant of log(values) against log(radii)."""
    slope, icpt = np.polyfit(np.log(radii), np.log(values), 1)
    return float(slope), float(np.exp(icpt))


def _averaged_fit(radii, table: np.ndarray) -> GrowthFit:
    """Fit each row (center) separately; rows need >= 2 positive windows."""
    radii = np.asarray(radii, dtype=float)
    slopes, consts = [], []
    for row in table:
        ok = row > 0
        if ok.sum() >= 2:
            s, k = fit_loglog(radii[ok], row[ok])
            slopes.append(s)
            consts.append(k)
    if not slopes:
        raise EmptyWindow("no center has two windows with positive mass")
    return GrowthFit(tuple(radii), tuple(table.mean(axis=0)), float(np.mean(slopes)),
                     float(np.exp(np.mean(np.log(consts)))), tuple(slopes))


def measure_growth(m: MeasureField, centers, radii) -> GrowthFit:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    table = np.array([[m.ball_mass(c, r) for r in radii] for c in centers])
    return _averaged_fit(radii, table)


@dataclass(frozen=True)
class PerimeterMeasureReport:
    perimeter_fit: GrowthFit
    measure_fit: GrowthFit | None  # None when mu_1 vanishes on every window
    max_ratio: float  # max P / mu_1 over windows touching the boundary; inf on failure
    pairs: tuple[tuple[float, float, float], ...] = field(repr=False)  # (r, P, mu_1)


def perimeter_vs_measure(mask: ShapeMask, m: MeasureField, centers, radii) -> PerimeterMeasureReport:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    P = np.zeros((len(centers), len(radii)))
    M = np.zeros_like(P)
    for i, c in enumerate(centers):
        for j, r in enumerate(radii):
            P[i, j] = perimeter(mask, BallSpec(tuple(c), r))
            M[i, j] = m.ball_mass(c, r)
    touching = (P > 0) | (M > 0)
    if not touching.any():
        raise EmptyWindow("no window touches the boundary")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(M[touching] > 0, P[touching] / M[touching], np.inf)
    pairs = tuple((float(radii[j]), float(P[i, j]), float(M[i, j]))
                  for i in range(len(centers)) for j in range(len(radii)))
    try:
        mfit = _averaged_fit(radii, M)
    except EmptyWindow:
        mfit = None
    return PerimeterMeasureReport(_averaged_fit(radii, P), mfit, float(ratio.max()), pairs)


# -- densities ------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityRow:
    r: float
    C1: float  # min density of the set over boundary cells
    C2: float  # max density
    comp_min: float  # same for the complement
    comp_max: float


def density_scan(mask: ShapeMask, radii) -> list[DensityRow]:
    bnd = boundary_cells(mask)
    if not bnd.any():
        raise NoBoundary("mask has no boundary inside D")
    rows = []
    for r in radii:
        ratio = density_ratios_at_cells(mask, r)[bnd]
        comp = 1.0 - ratio  # |Omega^c cap B| / |B cap D|
        rows.append(DensityRow(float(r), float(ratio.min()), float(ratio.max()),
                               float(comp.min()), float(comp.max())))
    return rows


def reduced_boundary_fraction(mask: ShapeMask, r: float, delta: float = 0.05) -> float:
    bnd = boundary_cells(mask)
    if not bnd.any():
        raise NoBoundary("mask has no boundary inside D")
    return float(reduced_boundary_proxy(mask, r, delta).sum() / bnd.sum())


# -- test vector fields and the Euler-Lagrange identity -------------------------------


@dataclass(frozen=True)
class VectorTestField:
    """Phi(x) = amplitude (G(|x-c|) - G(6 sigma))^+ e, G(r) = exp(-r^2 / (2 sigma^2))."""

    center: tuple[float, ...]
    width: float
    direction: tuple[float, ...]
    amplitude: float = 1.0

    def __post_init__(self):
        e = np.asarray(self.direction, dtype=float)
        if len(e) != len(self.center) or not np.linalg.norm(e) > 0:
            raise ValueError("direction must be a nonzero vector of the field's dimension")
        if not self.width > 0:
            raise ValueError("width must be positive")
        norm = np.linalg.norm(e)
        if abs(norm - 1) > 4 * np.finfo(float).eps:
            e = e / norm
        object.__setattr__(self, "direction", tuple(float(c) for c in e))
        self._check_jacobian()

    @property
    def support_radius(self) -> float:
        return 6.0 * self.width

    def _profile(self, x):
        """(G - G_cut)^+ and its gradient at points x of shape (d, ...)."""
        c = np.asarray(self.center).reshape((-1,) + (1,) * (x.ndim - 1))
        dx = x - c
        r2 = np.sum(dx * dx, axis=0)
        s2 = self.width**2
        G = np.exp(-r2 / (2 * s2))
        inside = r2 < self.support_radius**2
        val = np.where(inside, G - np.exp(-18.0), 0.0)
        grad = np.where(inside, -dx / s2 * G, 0.0)
        return val, grad

    def value(self, x) -> np.ndarray:
        """Phi at points x (d, ...), shape (d, ...)."""
        x = np.asarray(x, dtype=float)
        val, _ = self._profile(x)
        e = np.asarray(self.direction).reshape((-1,) + (1,) * (x.ndim - 1))
        return self.amplitude * e * val

    def jacobian(self, x) -> np.ndarray:
        """DPhi[i, j] = d Phi_i / d x_j, shape (d, d, ...)."""
        x = np.asarray(x, dtype=float)
        _, grad = self._profile(x)
        e = np.asarray(self.direction).reshape((-1, 1) + (1,) * (x.ndim - 1))
        return self.amplitude * e * grad[None]

    def divergence(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _, grad = self._profile(x)
        e = np.asarray(self.direction).reshape((-1,) + (1,) * (x.ndim - 1))
        return self.amplitude * np.sum(e * grad, axis=0)

    def scaled(self, a: float) -> VectorTestField:
        return VectorTestField(self.center, self.width, self.direction, self.amplitude * a)

    def _check_jacobian(self):
        d = len(self.center)
        rng = np.random.default_rng(0)
        pts = np.asarray(self.center)[:, None] + self.width * rng.uniform(-2, 2, size=(d, 3))
        step = 1e-6 * self.width
        J = self.jacobian(pts)
        scale = abs(self.amplitude) / self.width
        for j in range(d):
            dx = np.zeros((d, 1))
            dx[j] = step
            fd = (self.value(pts + dx) - self.value(pts - dx)) / (2 * step)
            if np.max(np.abs(fd - J[:, j])) > 1e-8 * scale:
                raise ValueError("analytic Jacobian disagrees with finite differences")


def _corner_field_data(grid: GridSpec, phi: VectorTestField):
    """Phi, DPhi and div Phi at every corner sample."""
    xc = corner_positions(grid)  # (2^d, d, *cells)
    xs = np.moveaxis(xc, 1, 0)  # (d, 2^d, *cells)
    return phi.value(xs), phi.jacobian(xs), phi.divergence(xs)


def el_terms(u: ScalarField, phi: VectorTestField, lambda_c: float, p: float, q: float) -> np.ndarray:
    """The five integrals of the Euler-Lagrange left side, in order."""
    grid = u.grid
    g = corner_gradients(grid, u.values)  # (2^d, d, *cells)
    gn2 = np.sum(g * g, axis=1)
    _, J, div = _corner_field_data(grid, phi)
    # (DPhi grad u, grad u) per sample
    DPg = np.zeros_like(gn2)
    for i in range(grid.dim):
        for j in range(grid.dim):
            DPg += J[i, j] * g[:, j] * g[:, i]
    w = _sample_weight(grid)
    x = grid.node_coords()
    div_nodes = phi.divergence(x)
    return np.array([
        w * np.sum(gn2 ** ((p - 2) / 2) * DPg),
        w * np.sum(DPg),
        -w * np.sum(gn2 ** (p / 2) * div) / p,
        -w * np.sum(gn2 * div) / 2,
        lambda_c / q * float(np.sum(grid.node_weights * np.abs(u.values) ** q * div_nodes)),
    ])


def el_lhs(u: ScalarField, phi: VectorTestField, lambda_c: float, p: float, q: float) -> float:
    return float(np.sum(el_terms(u, phi, lambda_c, p, q)))


def el_scale(u: ScalarField, phi: VectorTestField, lambda_c: float, p: float, q: float) -> float:
    """Sum of the absolute five terms: the size the identity is measured against."""
    return float(np.sum(np.abs(el_terms(u, phi, lambda_c, p, q))))


def divergence_on_support(u: ScalarField, phi: VectorTestField) -> float:
    """int_{Omega_u} div Phi by the vertex rule over support cells."""
    grid = u.grid
    mask = support_mask(u, SUPPORT_TAU)
    _, _, div = _corner_field_data(grid, phi)
    return float(_sample_weight(grid) * np.sum(div[:, mask.cells]))


@dataclass(frozen=True)
class LambdaEstimate:
    Lambda: float
    spread: float  # coefficient of variation of the per-field ratios
    ratios: tuple[float, ...]
    used: int


def estimate_Lambda(u: ScalarField, phis: Sequence[VectorTestField], spec: ProblemSpec,
                    rel_floor: float = 1e-6) -> LambdaEstimate:
    el, den = [], []
    for phi in phis:
        d = divergence_on_support(u, phi)
        size = _sample_weight(u.grid) * np.sum(np.abs(_corner_field_data(u.grid, phi)[2]))
        if abs(d) > rel_floor * size:
            el.append(el_lhs(u, phi, spec.lambda_c, spec.p, spec.q))
            den.append(d)
    if not den:
        raise DegenerateFields("every test field has zero divergence over the support")
    el, den = np.asarray(el), np.asarray(den)
    Lam = float(el @ den / (den @ den))
    ratios = el / den
    spread = float(np.std(ratios) / abs(np.mean(ratios)))
    return LambdaEstimate(Lam, spread, tuple(map(float, ratios)), len(den))


def boundary_Lambda(u: ScalarField, mask: ShapeMask, p: float) -> float:
    """Mean of (p-1)/p |grad u|^p + |grad u|^2 / 2 over the support's boundary cells."""
    g = corner_gradients(u.grid, u.values)
    gn = np.sqrt(np.sum(g * g, axis=1)).max(axis=0)
    bnd = boundary_cells(mask)
    vals = (p - 1) / p * gn[bnd] ** p + 0.5 * gn[bnd] ** 2
    return float(vals.mean())


# -- flux limit -----------------------------------------------------------------------


@dataclass(frozen=True)
class FluxCurve:
    eps: tuple[float, ...]
    values: tuple[float, ...]


def flux_limit(u: ScalarField, phi: VectorTestField, spec: ProblemSpec, Lambda: float,
               eps_list) -> FluxCurve:
    """(1/eps) int_{0<u<eps} (phi . grad u) ((1-p)/p |grad u|^p - |grad u|^2/2 + Lambda)."""
    grid = u.grid
    p = spec.p
    g = corner_gradients(grid, u.values)
    gn2 = np.sum(g * g, axis=1)
    val, _, _ = _corner_field_data(grid, phi)
    phig = np.sum(np.moveaxis(val, 0, 1) * g, axis=1)
    bracket = (1 - p) / p * gn2 ** (p / 2) - 0.5 * gn2 + Lambda
    integrand = phig * bracket  # (2^d, *cells)
    cell_u = corner_values(grid, u.values).mean(axis=0)
    w = _sample_weight(grid)
    out = []
    for eps in eps_list:
        strip = (cell_u > 0) & (cell_u < eps)
        out.append(float(w * np.sum(integrand[:, strip]) / eps))
    return FluxCurve(tuple(map(float, eps_list)), tuple(out))


# -- Lipschitz and the generalized weak identity -------------------------------------------


def lipschitz_estimate(u: ScalarField, interior_margin: float) -> float:
    grid = u.grid
    if interior_margin < 2 * max(grid.h) - 1e-12:
        raise ValueError("margin must be at least two mesh widths")
    grads = np.gradient(u.values, *grid.h) if grid.dim > 1 else [np.gradient(u.values, grid.h[0])]
    mag = np.sqrt(sum(gr * gr for gr in grads))
    x = grid.node_coords()
    dist = np.min([np.minimum(x[a], grid.extents[a] - x[a]) for a in range(grid.dim)], axis=0)
    sel = dist >= interior_margin - 1e-12
    return float(mag[sel].max()) if sel.any() else 0.0


def cutoff_pn(n: float) -> Callable[[np.ndarray], np.ndarray]:
    """p_n(r) = 0 for r <= 0, n r on [0, 1/n], 1 beyond."""
    def P(r):
        return np.clip(n * np.asarray(r, dtype=float), 0.0, 1.0)
    return P


@dataclass(frozen=True)
class WeakIdentity:
    defect: float
    scale: float
    terms: tuple[float, float, float, float]


def _divided_difference(P, a, b):
    """(P(b) - P(a)) / (b - a), with a centered difference when a == b."""
    diff = b - a
    eq = np.abs(diff) <= 1e-14 * np.maximum(1.0, np.abs(a))
    safe = np.where(eq, 1.0, diff)
    dd = (P(b) - P(a)) / safe
    m = 0.5 * (a + b)
    step = 1e-7 * np.maximum(1.0, np.abs(m))
    return np.where(eq, (P(m + step) - P(m - step)) / (2 * step), dd)


def weak_identity_P(u: ScalarField, P: Callable, Psi: Callable, spec: ProblemSpec) -> WeakIdentity:
    """Defect of the identity obtained by testing the state equation with P(u) Psi.

    The chain and product rules are applied edge by edge: along an edge the
    difference of P(u) Psi splits into the divided difference of P times the
    difference of u times the mean of Psi, plus the mean of P(u) times the
    difference of Psi. The four sums then add up to the weak residual tested
    with the nodal values of P(u) Psi, so the defect vanishes with the
    residual instead of with the mesh width.
    """
    grid = u.grid
    v = u.values
    p, q, lam = spec.p, spec.q, spec.lambda_c
    x = grid.node_coords()
    psi = np.asarray(Psi(x), dtype=float)
    Pu = np.asarray(P(v), dtype=float)
    g, _ = flux_weights(grid, v, p)
    gn2 = np.sum(g * g, axis=1)
    w = _sample_weight(grid)
    t1 = t2 = t3 = 0.0
    for k, corner in enumerate(corner_offsets(grid.dim)):
        for a in range(grid.dim):
            sl = edge_slices(grid, corner, a)
            lo = [slice(None)] * grid.dim
            hi = [slice(None)] * grid.dim
            lo[a], hi[a] = slice(None, -1), slice(1, None)
            ua, ub = v[tuple(lo)][sl], v[tuple(hi)][sl]
            pa, pb = Pu[tuple(lo)][sl], Pu[tuple(hi)][sl]
            sa, sb = psi[tuple(lo)][sl], psi[tuple(hi)][sl]
            dP = _divided_difference(P, ua, ub)
            ga = g[k, a]
            pw = gn2[k] ** ((p - 2) / 2)
            t1 += w * np.sum(pw * ga * ga * dP * 0.5 * (sa + sb))
            t2 += w * np.sum(ga * ga * dP * 0.5 * (sa + sb))
            t3 += w * np.sum((pw + 1) * ga * 0.5 * (pa + pb) * (sb - sa) / grid.h[a])
    t4 = lam * float(np.sum(grid.node_weights * np.abs(v) ** (q - 2) * v * Pu * psi))
    terms = (float(t1), float(t2), float(t3), t4)
    return WeakIdentity(terms[0] + terms[1] + terms[2] - terms[3], float(np.sum(np.abs(terms))), terms)


def bump(center, radius: float) -> Callable:
    """Smooth scalar bump exp(1 - 1/(1 - s^2)) for s = |x - c| / radius < 1."""
    center = np.asarray(center, dtype=float)

    def Psi(x):
        c = center.reshape((-1,) + (1,) * (x.ndim - 1))
        s2 = np.sum((x - c) ** 2, axis=0) / radius**2
        out = np.zeros_like(s2)
        inside = s2 < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        return out
    return Psi


# -- experiments ---------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceReport:
    lambda_constrained: float
    lambda_support: float
    gap: float
    support_volume: float


def equivalence_check(spec: ProblemSpec, grid: GridSpec, opts: SolverOptions | None = None,
                      result=None) -> EquivalenceReport:
    opts = opts or SolverOptions()
    res = result if result is not None else minimize_constrained(spec, grid, opts=opts)
    mask = support_mask(res.u, SUPPORT_TAU)
    lam_s = solve_lambda1(mask, spec.p, spec.q, opts).lam
    gap = abs(res.lambda_c - lam_s) / lam_s
    return EquivalenceReport(res.lambda_c, lam_s, gap, support_volume(res.u))


@dataclass(frozen=True)
class ContinuityRow:
    distance: float
    gap: float
    lam: float


def continuity_experiment(base: ShapeMask, perturbations: Sequence[ShapeMask], p: float, q: float,
                          opts: SolverOptions | None = None) -> list[ContinuityRow]:
    opts = opts or SolverOptions()
    lam0 = solve_lambda1(base, p, q, opts).lam
    rows = []
    for m in perturbations:
        lam = solve_lambda1(m, p, q, opts).lam
        rows.append(ContinuityRow(hausdorff_comp_distance(base, m), abs(lam - lam0), lam))
    return sorted(rows, key=lambda r: (r.distance, r.gap))


def faber_krahn_compare(shapes: dict[str, ShapeMask], p: float, q: float,
                        opts: SolverOptions | None = None) -> list[tuple[str, float]]:
    """Eigenvalue of each shape, sorted ascending."""
    opts = opts or SolverOptions()
    counts = [m.count for m in shapes.values()]
    if max(counts) - min(counts) > 1:
        raise VolumeMismatch(f"shape cell counts differ by more than one: {counts}")
    out = [(name, solve_lambda1(m, p, q, opts).lam) for name, m in shapes.items()]
    return sorted(out, key=lambda t: t[1])


# -- placement helpers ---------------------------------------------------------------------


def boundary_centers(mask: ShapeMask, n: int, r: float, delta: float = 0.05,
                     seed: int = 0) -> np.ndarray:
    """n reduced-boundary cell centers, spread by a seeded shuffle."""
    cells = reduced_boundary_proxy(mask, r, delta)
    pts = cell_center_points(mask.grid, cells)
    if len(pts) == 0:
        raise NoBoundary("no reduced-boundary cell")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(pts))[: min(n, len(pts))]
    return pts[np.sort(idx)]


def boundary_fields(mask: ShapeMask, n: int, width: float, seed: int = 0) -> list[VectorTestField]:
    """Bumps centered on the free boundary and pointing along the outward normal."""
    pts = boundary_centers(mask, n, 2 * width, seed=seed)
    normals = outward_normals(mask, pts, smoothing=width)
    return [VectorTestField(tuple(c), width, tuple(nv)) for c, nv in zip(pts, normals)]


def interior_fields(mask: ShapeMask, n: int, margin: float, seed: int = 0) -> list[VectorTestField]:
    """Bumps whose support lies inside the mask, at least ``margin`` from its boundary."""
    grid = mask.grid
    dist = distance_to_complement(mask)
    x = grid.node_coords()
    rng = np.random.default_rng(seed)
    cand = np.argwhere(dist > margin + 6 * max(grid.h))
    if len(cand) == 0:
        return []
    out = []
    for k in rng.permutation(len(cand))[:n]:
        idx = tuple(cand[k])
        c = tuple(float(x[a][idx]) for a in range(grid.dim))
        sigma = (dist[idx] - margin) / 6.0
        e = rng.normal(size=grid.dim)
        out.append(VectorTestField(c, float(sigma), tuple(e)))
    return out
