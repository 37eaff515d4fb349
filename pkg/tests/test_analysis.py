import numpy as np
import pytest

from freeshape.analysis import (
    MeasureField,
    VectorTestField,
    boundary_concentration,
    boundary_fields,
    bump,
    continuity_experiment,
    cutoff_pn,
    density_scan,
    el_lhs,
    el_terms,
    equivalence_check,
    estimate_Lambda,
    faber_krahn_compare,
    flux_limit,
    interior_fields,
    interior_nodes,
    lipschitz_estimate,
    measure_growth,
    perimeter_vs_measure,
    residual_measure,
    weak_identity_P,
)
from freeshape.eigensolver import solve_lambda1
from freeshape.errors import DegenerateFields, EmptyWindow, NoBoundary, VolumeMismatch
from freeshape.fbsolver import ProblemSpec, minimize_constrained
from freeshape.fields import ScalarField
from freeshape.geometry import (
    ShapeMask,
    full_mask,
    make_ball,
    make_rect,
    support_mask,
)
from freeshape.grid import make_grid

BOX = make_grid(2, [2.0, 2.0], [65, 65])
H = BOX.h[0]


@pytest.fixture(scope="module")
def optimum():
    spec = ProblemSpec(3, 2.5, 0.5)
    res = minimize_constrained(spec, BOX)
    return res, spec.with_(lambda_c=res.lambda_c)


@pytest.fixture(scope="module")
def disk_pair():
    m = make_ball(BOX, [1.0, 1.0], 0.5)
    return m, solve_lambda1(m, 3, 2.5)


class SumField:
    """a Phi1 + b Phi2, with the interface el_terms needs."""

    def __init__(self, a, f1, b, f2):
        self.parts = ((a, f1), (b, f2))

    def value(self, x):
        return sum(c * f.value(x) for c, f in self.parts)

    def jacobian(self, x):
        return sum(c * f.jacobian(x) for c, f in self.parts)

    def divergence(self, x):
        return sum(c * f.divergence(x) for c, f in self.parts)


# -- residual measure --------------------------------------------------------------------


def test_measure_of_full_domain_eigenpair_vanishes_inside():
    g = make_grid(2, [1.0, 1.0], [33, 33])
    res = solve_lambda1(full_mask(g), 3, 2.5)
    m = residual_measure(res.field, res.lam, 3, 2.5)
    scale = np.abs(residual_measure(res.field, 0.0, 3, 2.5).weights).max()
    assert np.abs(m.weights[g.interior]).max() < 1e-7 * scale


def test_measure_of_zero():
    m = residual_measure(ScalarField(BOX, np.zeros(BOX.counts)), 10.0, 3, 2.5)
    assert m.total == 0 and not m.weights.any()


def test_measure_of_optimum_is_positive_and_on_the_boundary(optimum):
    res, spec = optimum
    m = residual_measure(res.u, spec.lambda_c, spec.p, spec.q)
    wmax = m.weights.max()
    assert m.weights.min() >= -1e-8 * wmax
    inner = interior_nodes(res.mask, 3)
    assert np.abs(m.weights[inner]).max() <= 1e-6 * wmax
    assert boundary_concentration(m, res.mask) > 0.99


def test_measure_field_rejects_bad_weights():
    with pytest.raises(ValueError):
        MeasureField(BOX, np.full(BOX.counts, np.inf))


# -- growth ------------------------------------------------------------------------------------


def test_line_measure_has_unit_slope():
    w = np.zeros(BOX.counts)
    w[32, :] = 1.0  # uniform mass on the segment x = 1
    m = MeasureField(BOX, w)
    radii = [4 * H, 6 * H, 8 * H, 11 * H, 16 * H]
    fit = measure_growth(m, [[1.0, 1.0], [1.0, 0.9]], radii)
    assert fit.slope == pytest.approx(1.0, abs=0.05)


def test_zero_measure_is_rejected():
    with pytest.raises(EmptyWindow):
        measure_growth(MeasureField(BOX, np.zeros(BOX.counts)), [[1.0, 1.0]], [0.1, 0.2])


def test_perimeter_vs_zero_measure_is_infinite():
    mask = make_ball(BOX, [1.0, 1.0], 0.4)
    rep = perimeter_vs_measure(mask, MeasureField(BOX, np.zeros(BOX.counts)),
                               [[1.4, 1.0]], [4 * H, 8 * H])
    assert rep.max_ratio == np.inf


def test_windows_off_the_boundary_are_excluded(optimum):
    res, spec = optimum
    m = residual_measure(res.u, spec.lambda_c, spec.p, spec.q)
    far = [0.2, 0.2]
    with pytest.raises(EmptyWindow):
        perimeter_vs_measure(res.mask, m, [far], [2 * H, 3 * H])


def test_growth_radii_must_increase():
    from freeshape.analysis import GrowthFit
    with pytest.raises(ValueError):
        GrowthFit((0.2, 0.1), (1, 2), 1.0, 1.0)


# -- densities -----------------------------------------------------------------------------------


def test_half_plane_density_scan():
    half = make_rect(BOX, [0.0, 0.0], [1.0, 2.0])
    for row in density_scan(half, [8 * H, 16 * H]):
        assert row.C1 == pytest.approx(0.5, abs=0.05)
        assert row.C2 == pytest.approx(0.5, abs=0.05)


def test_full_box_has_no_boundary():
    with pytest.raises(NoBoundary):
        density_scan(full_mask(BOX), [4 * H])


# -- Euler-Lagrange ---------------------------------------------------------------------------------


def test_el_of_zero_field():
    phi = VectorTestField((1.0, 1.0), 4 * H, (1.0, 0.0))
    assert el_lhs(ScalarField(BOX, np.zeros(BOX.counts)), phi, 10.0, 3, 2.5) == 0.0


def test_el_is_linear_in_phi(disk_pair):
    _, res = disk_pair
    f1 = VectorTestField((1.3, 1.0), 4 * H, (1.0, 0.3))
    f2 = VectorTestField((0.9, 1.2), 3 * H, (-0.2, 1.0))
    a, b = 0.7, -1.9
    args = (res.field, res.lam, 3, 2.5)
    lhs = np.sum(el_terms(args[0], SumField(a, f1, b, f2), *args[1:]))
    rhs = a * el_lhs(args[0], f1, *args[1:]) + b * el_lhs(args[0], f2, *args[1:])
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-14)
    assert el_lhs(args[0], f1.scaled(-1), *args[1:]) == -el_lhs(args[0], f1, *args[1:])


def test_lambda_needs_boundary_crossing_fields(optimum):
    res, spec = optimum
    inner = interior_fields(res.mask, 4, 2 * H, seed=1)
    assert inner
    with pytest.raises(DegenerateFields):
        estimate_Lambda(res.u, inner, spec)


def test_lambda_is_scale_invariant(optimum):
    res, spec = optimum
    phis = boundary_fields(res.mask, 6, 6 * H, seed=3)
    a = estimate_Lambda(res.u, phis, spec)
    b = estimate_Lambda(res.u, [f.scaled(2.0) for f in phis], spec)
    assert b.Lambda == pytest.approx(a.Lambda, rel=1e-12)
    assert np.allclose(a.ratios, b.ratios, rtol=1e-12)
    assert a.Lambda > 0


def test_vector_field_data():
    phi = VectorTestField((1.0, 1.0), 0.1, (3.0, 4.0), amplitude=2.0)
    assert np.allclose(phi.direction, (0.6, 0.8))
    x = BOX.node_coords()
    J = phi.jacobian(x)
    assert np.allclose(phi.divergence(x), J[0, 0] + J[1, 1])
    far = np.hypot(x[0] - 1, x[1] - 1) >= phi.support_radius
    assert not phi.value(x)[:, far].any()
    with pytest.raises(ValueError):
        VectorTestField((1.0, 1.0), 0.1, (0.0, 0.0))


# -- flux ----------------------------------------------------------------------------------------------


def test_flux_full_window_is_finite(optimum):
    res, spec = optimum
    phi = boundary_fields(res.mask, 1, 6 * H)[0]
    curve = flux_limit(res.u, phi, spec, 1.0, [2 * res.u.max_abs()])
    assert np.isfinite(curve.values[0])


def test_flux_without_free_boundary_is_reported():
    g = make_grid(2, [1.0, 1.0], [33, 33])
    res = solve_lambda1(full_mask(g), 3, 2.5)
    phi = VectorTestField((0.5, 0.5), 0.05, (1.0, 0.0))
    curve = flux_limit(res.field, phi, ProblemSpec(3, 2.5, 1.0, lambda_c=res.lam), 0.0,
                       [0.4, 0.2, 0.1])
    assert all(np.isfinite(curve.values))


# -- Lipschitz and the weak identity -----------------------------------------------------------------


def test_lipschitz_of_ramp():
    x = BOX.node_coords()
    u = ScalarField(BOX, 0.3 * x[0] + 0.4 * x[1])
    assert lipschitz_estimate(u, 4 * H) == pytest.approx(0.5, rel=1e-10)
    assert lipschitz_estimate(ScalarField(BOX, np.zeros(BOX.counts)), 4 * H) == 0
    with pytest.raises(ValueError):
        lipschitz_estimate(u, H)


def test_weak_identity(disk_pair):
    _, res = disk_pair
    spec = ProblemSpec(3, 2.5, 1.0, lambda_c=res.lam)
    Psi = bump([1.0, 1.0], 0.3)
    zero = weak_identity_P(res.field, lambda r: np.zeros_like(r), Psi, spec)
    assert zero.defect == 0.0
    for P in (lambda r: np.asarray(r, dtype=float), cutoff_pn(1 / H), np.sin):
        w = weak_identity_P(res.field, P, Psi, spec)
        assert abs(w.defect) <= 1e-6 * w.scale


def test_cutoff_pn():
    P = cutoff_pn(4.0)
    assert np.allclose(P(np.array([-1.0, 0.0, 0.125, 0.25, 3.0])), [0, 0, 0.5, 1, 1])


# -- experiments ---------------------------------------------------------------------------------------


def test_equivalence_with_inactive_constraint():
    g = make_grid(1, [1.0], [65])
    rep = equivalence_check(ProblemSpec(4, 3, 1.0), g)
    assert rep.gap < 1e-10


def test_equivalence_1d():
    g = make_grid(1, [2.0], [129])
    rep = equivalence_check(ProblemSpec(4, 3, 1.0), g)
    assert rep.gap < 1e-2


def test_continuity_identical_sequence(disk_pair):
    mask, _ = disk_pair
    rows = continuity_experiment(mask, [mask, mask], 3, 2.5)
    assert all(r.gap == 0 and r.distance == 0 for r in rows)


def test_continuity_growing_disks():
    base = make_ball(BOX, [1.01, 0.99], 0.5)
    masks = [make_ball(BOX, [1.01, 0.99], 0.5 * (1 - 2.0**-n)) for n in (1, 2, 3, 4)]
    rows = continuity_experiment(base, masks, 3, 2.5)
    gaps = [r.gap for r in rows]
    assert gaps == sorted(gaps)
    assert [r.distance for r in rows] == sorted(r.distance for r in rows)


def _slit_masks(square, lengths):
    out = []
    i0, j0 = round(1.0 / H), round(0.5 / H)
    for L in lengths:
        c = np.array(square.cells)
        c[i0, j0:j0 + L] = False
        out.append(ShapeMask(BOX, c))
    return out


@pytest.mark.xfail(strict=True, reason="a one-cell slit also removes a node line; the gap at "
                   "d_Hc < 4h is 1-9% on this grid (see the decisions ledger)")
def test_continuity_shrinking_slit():
    sq = make_rect(BOX, [0.5, 0.5], [1.5, 1.5])
    rows = continuity_experiment(sq, _slit_masks(sq, [16, 8, 4, 2, 1]), 3, 2.5)
    lam0 = solve_lambda1(sq, 3, 2.5).lam
    assert all(r.gap / lam0 < 1e-2 for r in rows if r.distance < 4 * H)


def test_continuity_shrinking_slit_is_monotone():
    sq = make_rect(BOX, [0.5, 0.5], [1.5, 1.5])
    rows = continuity_experiment(sq, _slit_masks(sq, [16, 8, 4, 2, 1]), 3, 2.5)
    gaps = [r.gap for r in rows]
    assert gaps == sorted(gaps)


def test_faber_krahn_small_cases(disk_pair):
    mask, res = disk_pair
    single = faber_krahn_compare({"disk": mask}, 3, 2.5)
    assert single == [("disk", pytest.approx(res.lam))]
    twin = faber_krahn_compare({"a": mask, "b": mask}, 3, 2.5)
    assert twin[0][1] == twin[1][1]
    with pytest.raises(VolumeMismatch):
        faber_krahn_compare({"a": mask, "b": make_ball(BOX, [1.0, 1.0], 0.3)}, 3, 2.5)


def test_support_mask_of_optimum_has_expected_area(optimum):
    res, _ = optimum
    assert support_mask(res.u).count * BOX.cell_volume <= 0.5 + BOX.cell_volume
