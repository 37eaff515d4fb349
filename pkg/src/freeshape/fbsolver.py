"""Volume-constrained and penalized free-boundary formulations of the shape problem.

Both minimize the state functional J(w) = ep(w) + e2(w) - lambda_c dq(w). The
constrained form keeps |Omega_w| <= c by truncation w -> (w - t)^+; the
penalized form adds mu [|Omega_w| - c]^+. Reported objective values include
the constant lambda_c, J_mu(w) = J(w) + lambda_c + penalty, so a constrained
optimum has J_value = lambda_c.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .eigensolver import SolverOptions, solve_lambda1
from .errors import (
    BadExponents,
    Infeasible,
    NegativeThreshold,
    NoDomain,
    NonConvergence,
    NonPositiveX,
    ZeroField,
)
from .fields import (
    EnergyBreakdown,
    ScalarField,
    breakdown,
    check_exponents,
    corner_values,
    grad_mass,
    grad_numerator,
    secant_stiffness,
)
from .geometry import ShapeMask, full_mask, support_mask, volume
from .grid import GridSpec

# l1 isoperimetric constants matching the face-count perimeter
ISO_L1 = {1: 2.0, 2: 4.0}
# Euclidean constants, for comparison (2 sqrt(pi) in the plane)
ISO_EUCLID = {1: 2.0, 2: 2.0 * np.sqrt(np.pi)}

SUPPORT_TAU = 1e-10


@dataclass(frozen=True)
class ProblemSpec:
    p: float
    q: float
    c: float
    mu: float = 0.0
    lambda_c: float = 0.0

    def __post_init__(self):
        check_exponents(self.p, self.q)
        if not self.c > 0:
            raise ValueError(f"volume budget must be positive, got {self.c}")
        if self.mu < 0 or self.lambda_c < 0:
            raise ValueError("mu and lambda_c must be nonnegative")

    def with_(self, **kw) -> ProblemSpec:
        return ProblemSpec(**{**self.__dict__, **kw})


@dataclass(frozen=True, eq=False)
class FbResult:
    u: ScalarField
    lambda_c: float  # realized quotient R(u)
    support_volume: float
    J_value: float
    outer_iterations: int
    inner_iterations: int = 0
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def mask(self) -> ShapeMask:
        return support_mask(self.u, SUPPORT_TAU)


def truncate_plus(u: ScalarField, t: float) -> ScalarField:
    if t < 0:
        raise NegativeThreshold(f"threshold must be nonnegative, got {t}")
    return ScalarField(u.grid, np.maximum(u.values - t, 0.0))


def _cell_levels(grid: GridSpec, v: np.ndarray) -> np.ndarray:
    """Largest corner value of every cell (the level at which the cell leaves the support)."""
    return corner_values(grid, v).max(axis=0).ravel()


def volume_projection(u: ScalarField, c: float) -> tuple[ScalarField, float]:
    """Smallest t >= 0 with |Omega_{(u - t)^+}| <= c, and the truncated field.

    The support of (u - t)^+ is the set of cells whose largest corner value
    exceeds t, so the threshold is an order statistic of those cell levels.
    """
    grid = u.grid
    if not c > 0:
        raise Infeasible(f"volume budget must be positive, got {c}")
    n_max = cell_budget(grid, c)
    pos = ScalarField(grid, np.maximum(u.values, 0.0))
    if volume(support_mask(pos, SUPPORT_TAU)) <= c * (1 + 1e-12):
        return pos, 0.0
    levels = _cell_levels(grid, pos.values)
    # cells strictly above the (n_max + 1)-th largest level number at most n_max
    t = float(np.partition(levels, levels.size - n_max - 1)[levels.size - n_max - 1])
    return truncate_plus(pos, t), t


def cell_budget(grid: GridSpec, c: float) -> int:
    n_max = int(np.floor(c / grid.cell_volume * (1 + 1e-12)))
    if n_max < 1:
        raise Infeasible(f"budget {c} is smaller than one cell ({grid.cell_volume})")
    return n_max


def support_volume(u: ScalarField) -> float:
    return volume(support_mask(u, SUPPORT_TAU))


def J_smooth(e: EnergyBreakdown, lambda_c: float) -> float:
    return e.numerator - lambda_c * e.dq


def J_mu_value(u: ScalarField, spec: ProblemSpec) -> float:
    """ep + e2 + lambda_c (1 - dq) + mu [|Omega_u| - c]^+."""
    e = breakdown(u.grid, u.values, spec.p, spec.q)
    pen = spec.mu * max(support_volume(u) - spec.c, 0.0)
    return J_smooth(e, spec.lambda_c) + spec.lambda_c + pen


def _best_scale(e: EnergyBreakdown, p: float, q: float, lambda_c: float) -> float:
    """Minimizer over s > 0 of s^p ep + s^2 e2 - lambda_c s^q dq (1 if it sits at s -> 0)."""
    if e.dq == 0 or e.ep == 0:
        return 1.0

    def f(s):
        return s**p * e.ep + s**2 * e.e2 - lambda_c * s**q * e.dq

    def df(s):
        return p * s ** (p - 1) * e.ep + 2 * s * e.e2 - q * lambda_c * s ** (q - 1) * e.dq

    s_grid = np.logspace(-6, 6, 241)
    k = int(np.argmin(f(s_grid)))
    if f(s_grid[k]) >= min(f(1.0), 0.0):
        return 1.0
    lo, hi = s_grid[max(k - 1, 0)], s_grid[min(k + 1, s_grid.size - 1)]
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        if df(mid) < 0:
            lo = mid
        else:
            hi = mid
    s = float(np.sqrt(lo * hi))
    return s if f(s) < f(1.0) else 1.0


class _Stepper:
    """Preconditioned gradient steps on the smooth part J at fixed lambda_c.

    The preconditioner is the secant stiffness A(v) over all interior nodes
    of D, so a unit step is v -> lambda_c A(v)^{-1} grad dq(v): the state
    equation solved on the whole box with the current right-hand side.
    """

    def __init__(self, grid, spec):
        self.grid, self.spec = grid, spec
        self.nodes = np.flatnonzero(grid.interior.ravel())

    def direction(self, v, lam):
        p, q = self.spec.p, self.spec.q
        g = grad_numerator(self.grid, v, p) - lam * grad_mass(self.grid, v, q)
        A = secant_stiffness(self.grid, v, p, self.nodes)
        d = np.zeros(self.grid.n_nodes)
        d[self.nodes] = -spla.splu(A).solve(g.ravel()[self.nodes])
        return d.reshape(self.grid.counts)


def _resolve(w: ScalarField, spec: ProblemSpec, opts: SolverOptions):
    """Eigenpair on the support of w, warm-started from w; None if the support is empty."""
    mask = support_mask(w, SUPPORT_TAU)
    if mask.is_empty():
        return None
    try:
        return solve_lambda1(mask, spec.p, spec.q, opts, init=w)
    except NoDomain:
        return None


def minimize_constrained(spec: ProblemSpec, grid: GridSpec, init: ScalarField | None = None,
                         opts: SolverOptions | None = None, max_outer: int = 200,
                         outer_rtol: float = 1e-6,
                         steps: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125)) -> FbResult:
    """Minimize J(w) over |Omega_w| <= c, updating lambda_c by the realized quotient.

    One outer step: a preconditioned gradient step on J at the current
    lambda_c, the volume projection (w - t)^+, and a re-solve of the
    eigenproblem on the projected support; its quotient becomes the next
    lambda_c. The steps in ``steps`` are tried in order and the first that
    lowers lambda_c is kept, so lambda_c decreases strictly until it settles.
    Every re-solved state is a critical point of R with J = 0, so the
    reported J_value equals lambda_c.
    """
    opts = opts or SolverOptions()
    if spec.c >= grid.volume:
        res = solve_lambda1(full_mask(grid), spec.p, spec.q, opts)
        u = res.field
        return FbResult(u, res.lam, support_volume(u), res.lam, 0, 0, (res.lam,))

    if init is None:
        init = solve_lambda1(full_mask(grid), spec.p, spec.q, opts).field
    if init.max_abs() == 0:
        raise ZeroField("initial field vanishes")
    w, _ = volume_projection(ScalarField(grid, np.abs(init.values)), spec.c)
    res = _resolve(w, spec, opts)
    if res is None:
        raise Infeasible("the projected initial field has no interior support")
    lam, v = res.lam, res.field.values
    history = [lam]
    stepper = _Stepper(grid, spec)
    n_solves = 1
    for outer in range(1, max_outer + 1):
        d = stepper.direction(v, lam)
        best = None
        for alpha in steps:
            w, _ = volume_projection(ScalarField(grid, np.maximum(v + alpha * d, 0.0)), spec.c)
            cand = _resolve(w, spec, opts)
            n_solves += 1
            if cand is not None and cand.lam < lam:
                best = cand
                break
        if best is None:
            change = 0.0
        else:
            change = (lam - best.lam) / lam
            lam, v = best.lam, best.field.values
        history.append(lam)
        if change < outer_rtol:
            u = ScalarField(grid, v)
            e = breakdown(grid, v, spec.p, spec.q)
            return FbResult(u, e.numerator / e.dq, support_volume(u),
                            J_smooth(e, lam) + lam, outer, n_solves, tuple(history))
    raise NonConvergence(f"lambda_c did not settle in {max_outer} outer iterations")


def _scaled_J_mu(res, spec):
    """J_mu of the best multiple of the eigenfunction in ``res``."""
    lam = spec.lambda_c
    e = breakdown(res.u.grid, res.u.values, spec.p, spec.q)
    s = _best_scale(e, spec.p, spec.q, lam)
    if s == 1.0:
        # no multiple beats the critical amplitude; keep the eigenpair itself
        u = res.field
    else:
        u = res.u * s
    return u, J_mu_value(u, spec)


def minimize_penalized(spec: ProblemSpec, grid: GridSpec, init: ScalarField | None = None,
                       opts: SolverOptions | None = None, max_iters: int = 200,
                       rtol: float = 1e-9, n_levels: int = 4,
                       steps: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125)) -> FbResult:
    """Descent on J_mu with smooth steps and trial truncations.

    Candidates come from a preconditioned step on the smooth part: the step
    itself and, when its support exceeds c, the truncations (w - t)^+ at the
    level t_c restoring the volume and at fractions of t_c. Each candidate is
    replaced by the eigenpair on its support at the amplitude minimizing J_mu,
    and the best candidate is accepted if it lowers J_mu.
    """
    if not spec.lambda_c > 0:
        raise ValueError("minimize_penalized needs lambda_c > 0")
    opts = opts or SolverOptions()
    if init is None:
        init = solve_lambda1(full_mask(grid), spec.p, spec.q, opts).field
    if init.max_abs() == 0:
        raise ZeroField("initial field vanishes")

    def candidates(w: ScalarField):
        out = [w]
        if spec.mu > 0 and support_volume(w) > spec.c:
            _, t_c = volume_projection(w, spec.c)
            out += [truncate_plus(w, t_c * k / n_levels) for k in range(1, n_levels + 1)]
        return out

    def evaluate(w):
        res = _resolve(w, spec, opts)
        return None if res is None else _scaled_J_mu(res, spec)

    v = ScalarField(grid, np.abs(init.values))
    Jv = J_mu_value(v, spec)
    for w in candidates(v)[1:]:
        got = evaluate(w)
        if got is not None and got[1] < Jv:
            v, Jv = got
    history = [Jv]
    stepper = _Stepper(grid, spec)
    it = 0
    for it in range(1, max_iters + 1):
        d = stepper.direction(v.values, spec.lambda_c)
        best = None
        for alpha in steps:
            trial = ScalarField(grid, np.maximum(v.values + alpha * d, 0.0))
            for w in candidates(trial):
                got = evaluate(w)
                if got is not None and got[1] < Jv and (best is None or got[1] < best[1]):
                    best = got
            if best is not None:
                break
        if best is None:
            break
        drop = Jv - best[1]
        v, Jv = best
        history.append(Jv)
        if drop <= rtol * abs(Jv):
            break
    e = breakdown(grid, v.values, spec.p, spec.q)
    return FbResult(v, e.numerator / e.dq, support_volume(v), Jv, it, it, tuple(history))


def lp_norm(u: ScalarField, p: float) -> float:
    return float(np.sum(u.grid.node_weights * np.abs(u.values) ** p) ** (1.0 / p))


def chain_constant(spec: ProblemSpec, u: ScalarField) -> float:
    """K = lambda_c (|Omega_u| + ||u||_p^(q-1) |Omega_u|^((p+1-q)/p))."""
    if u.max_abs() == 0:
        raise ZeroField("K is undefined for a vanishing field")
    om = support_volume(u)
    return spec.lambda_c * (om + lp_norm(u, spec.p) ** (spec.q - 1) * om ** ((spec.p + 1 - spec.q) / spec.p))


def mu_star_estimate(spec: ProblemSpec, u: ScalarField, iso: dict | None = None) -> float:
    """Penalty threshold above which the volume constraint cannot be violated."""
    iso = ISO_L1 if iso is None else iso
    K = chain_constant(spec, u)
    p, d = spec.p, u.grid.dim
    return float(
        K ** (p / (p - 1)) * ((p - 1) / p) * iso[d] ** (-p / (p - 1))
        * spec.c ** ((1 - d) * p / (d * (p - 1)))
    )


@dataclass(frozen=True, eq=False)
class MuStarRun:
    mu_star: float  # estimate at the last infeasible penalized minimizer
    mu: float  # final penalty, 2 mu_star
    result: FbResult  # penalized minimizer at mu
    rounds: tuple[tuple[float, float, float], ...]  # (mu, mu_star, support volume)


def mu_star_selfconsistent(spec: ProblemSpec, grid: GridSpec, u0: ScalarField,
                           opts: SolverOptions | None = None, max_rounds: int = 8,
                           **penalized_kw) -> MuStarRun:
    """Penalty from the threshold evaluated at the penalized minimizer itself.

    The threshold bounds the volume of u_mu through norms of u_mu. Evaluated
    at another field (say the constrained optimum) it can be far too small,
    so iterate mu <- 2 mu_star(u_mu), starting from u0, until u_mu is feasible.
    """
    one_cell = grid.cell_volume
    mu_star = mu_star_estimate(spec, u0)
    rounds = []
    for _ in range(max_rounds):
        mu = 2.0 * mu_star
        res = minimize_penalized(spec.with_(mu=mu), grid, init=u0, opts=opts, **penalized_kw)
        rounds.append((mu, mu_star, res.support_volume))
        if res.support_volume <= spec.c + one_cell:
            return MuStarRun(mu_star, mu, res, tuple(rounds))
        mu_star = max(mu_star_estimate(spec, res.u), 2.0 * mu_star)
    raise NonConvergence(f"penalized support still exceeds c after {max_rounds} rounds")


def b_gap(x: float, q: float):
    """x^q - 1 - q (x - 1), nonnegative for x > 0 and q >= 1."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise NonPositiveX("b_gap needs x > 0")
    if np.any(np.asarray(q) < 2):
        raise BadExponents("b_gap is used with q >= 2")
    out = x**q - 1 - q * (x - 1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TruncationChain:
    t: float
    energy_drop: float  # J_mu-left side: smooth energy lost plus penalty lost
    mass_drop: float  # lambda_c (dq(u) - dq(u^t))
    bound: float  # t K


def truncation_chain(spec: ProblemSpec, u: ScalarField, t: float) -> TruncationChain:
    """The three sides of the truncation argument for u^t = (u - t)^+.

    Minimality of u for J_mu gives energy_drop <= mass_drop, and the pointwise
    inequality b_gap >= 0 with Hoelder gives mass_drop <= t K.
    """
    ut = truncate_plus(u, t)
    e, et = (breakdown(u.grid, w.values, spec.p, spec.q) for w in (u, ut))
    pen = spec.mu * (max(support_volume(u) - spec.c, 0) - max(support_volume(ut) - spec.c, 0))
    return TruncationChain(
        t=t,
        energy_drop=e.numerator - et.numerator + pen,
        mass_drop=spec.lambda_c * (e.dq - et.dq),
        bound=t * chain_constant(spec, u),
    )
