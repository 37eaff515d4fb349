"""First eigenvalue of -Delta_p - Delta on a mask, by minimizing the Rayleigh quotient.

The descent direction is the gradient preconditioned by the secant stiffness
A(v), the weighted 5-point matrix with A(v) v equal to the gradient of the
numerator. A unit step is then one sweep of nonlinear inverse iteration, v <-
R(v) A(v)^{-1} grad dq(v). Steps are backtracked (Armijo), projected onto
{v >= 0, v = 0 off the mask}, and followed by the exact amplitude line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import NoDomain, NonConvergence, ZeroDenominator
from .fields import (
    DQ_FLOOR,
    EnergyBreakdown,
    ScalarField,
    breakdown,
    check_exponents,
    grad_mass,
    grad_numerator,
    secant_stiffness,
)
from .geometry import ShapeMask, active_nodes, distance_to_complement


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 50_000
    tol: float = 1e-8
    seed: int = 0
    diag_p2q2: bool = False
    # largest factor the amplitude may change by in one step
    amplitude_factor: float = 4.0
    # consecutive lower-clipped amplitude steps that flag degeneracy
    degenerate_after: int = 8
    armijo: float = 1e-4
    # R is only known to about this relative precision near convergence
    roundoff_slack: float = 1e-13


@dataclass(frozen=True, eq=False)
class EigenResult:
    lam: float
    u: ScalarField  # unit max
    iterations: int
    grad_norm: float
    degenerate: bool
    # u * amplitude is the critical point of the quotient; 0 when degenerate
    amplitude: float = 1.0
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def field(self) -> ScalarField:
        return self.u * self.amplitude


@dataclass(frozen=True)
class AmplitudeProfile:
    t: np.ndarray
    values: np.ndarray
    t_star: float | None  # interior minimizer, None when there is none


def quotient_at_scale(e: EnergyBreakdown, p: float, q: float, t) -> np.ndarray:
    """R(t u) from one breakdown of u."""
    t = np.asarray(t, dtype=float)
    return (t ** (p - q) * e.ep + t ** (2 - q) * e.e2) / e.dq


def optimal_scale(e: EnergyBreakdown, p: float, q: float) -> float | None:
    """Minimizer of t -> R(t u), when it is interior."""
    if q > 2 and e.ep > 0 and e.e2 > 0:
        return float(((q - 2) * e.e2 / ((p - q) * e.ep)) ** (1.0 / (p - 2)))
    return None


def amplitude_profile(u: ScalarField, p: float, q: float, t_grid) -> AmplitudeProfile:
    e = breakdown(u.grid, u.values, p, q)
    if e.dq <= DQ_FLOOR:
        raise ZeroDenominator("amplitude profile of a vanishing field")
    t = np.asarray(t_grid, dtype=float)
    if np.any(t <= 0):
        raise ValueError("scales must be positive")
    return AmplitudeProfile(t, quotient_at_scale(e, p, q, t), optimal_scale(e, p, q))


def initial_profile(mask: ShapeMask) -> np.ndarray:
    """Positive bump on the active nodes: product of sines on the full box,
    distance to the complement otherwise."""
    grid = mask.grid
    if mask.cells.all():
        x = grid.node_coords()
        v = np.ones(grid.counts)
        for a in range(grid.dim):
            v = v * np.sin(np.pi * x[a] / grid.extents[a])
    else:
        v = distance_to_complement(mask)
    v = np.where(active_nodes(mask), np.maximum(v, 0.0), 0.0)
    return v / v.max()


class _Objective:
    """R(v) or, in degenerate mode, its small-amplitude limit e2/dq."""

    def __init__(self, grid, p, q, linear_only):
        self.grid, self.p, self.q = grid, p, q
        self.p_coef = 0.0 if linear_only else 1.0

    def value(self, v):
        e = breakdown(self.grid, v, self.p, self.q)
        if e.dq <= DQ_FLOOR:
            raise ZeroDenominator("iterate vanished")
        return (self.p_coef * e.ep + e.e2) / e.dq, e

    def residual(self, v, lam):
        """grad numerator - lam grad dq; equals dq * grad of the objective."""
        num = grad_numerator(self.grid, v, self.p, p_coef=self.p_coef)
        return num - lam * grad_mass(self.grid, v, self.q)


def _residual_norm(grid, r, v, q, free):
    """Mass-weighted residual size relative to grad dq; has the units of lambda."""
    m = grid.node_weights
    gm = grad_mass(grid, v, q)
    top = np.sum(r[free] ** 2 / m[free])
    bot = np.sum(gm[free] ** 2 / m[free])
    return float(np.sqrt(top / bot)) if bot > 0 else np.inf


def solve_lambda1(mask: ShapeMask, p: float, q: float,
                  opts: SolverOptions | None = None,
                  init: ScalarField | None = None) -> EigenResult:
    opts = opts or SolverOptions()
    check_exponents(p, q, opts.diag_p2q2)
    grid = mask.grid
    act = active_nodes(mask)
    if not act.any():
        raise NoDomain("the mask has no interior node")

    v = initial_profile(mask) if init is None else np.where(act, np.maximum(init.values, 0), 0.0)
    if not v.any():
        raise NoDomain("the initial field vanishes on the mask")
    v = v / v.max()
    homogeneous = p == 2 and q == 2
    obj = _Objective(grid, p, q, linear_only=False)
    degenerate = False
    lower_clips = 0
    fmax = opts.amplitude_factor

    def rescale(v, e):
        nonlocal lower_clips
        if homogeneous or degenerate:
            return v / v.max(), False
        ts = optimal_scale(e, p, q)
        t = 1.0 / fmax if ts is None else float(np.clip(ts, 1.0 / fmax, fmax))
        clipped = ts is None or ts <= 1.0 / fmax
        lower_clips = lower_clips + 1 if clipped else 0
        return v * t, True

    lam, e = obj.value(v)
    v, _ = rescale(v, e)
    lam, e = obj.value(v)
    history = [lam]
    flat_act = act.ravel()
    grad_norm = np.inf

    for it in range(1, opts.max_iters + 1):
        r = obj.residual(v, lam)
        free = act & ((v > 0) | (r < 0))
        grad_norm = _residual_norm(grid, r, v, q, free)
        if grad_norm <= opts.tol * (1 + abs(lam)):
            return _result(grid, v, lam, it - 1, grad_norm, degenerate, history)

        nodes = np.flatnonzero(free.ravel() & flat_act)
        A = secant_stiffness(grid, v, p, nodes, p_coef=obj.p_coef)
        rf = r.ravel()[nodes]
        step = spla.splu(A).solve(rf)
        slope = -float(rf @ step) / e.dq  # directional derivative of the objective

        alpha, accepted = 1.0, False
        while alpha > 1e-12:
            trial = v.ravel().copy()
            trial[nodes] -= alpha * step
            trial = np.maximum(trial.reshape(grid.counts), 0.0)
            if trial.any():
                lam_t, e_t = obj.value(trial)
                if lam_t <= lam + opts.armijo * alpha * slope:
                    accepted = True
                    break
                if lam_t <= lam + opts.roundoff_slack * abs(lam):
                    # quotient change below roundoff: judge by the residual instead
                    r_t = obj.residual(trial, lam_t)
                    free_t = act & ((trial > 0) | (r_t < 0))
                    if _residual_norm(grid, r_t, trial, q, free_t) < grad_norm:
                        accepted = True
                        break
            alpha *= 0.5
        if not accepted:
            if grad_norm <= 1e3 * opts.tol * (1 + abs(lam)):
                # stalled at the roundoff floor of the quotient
                return _result(grid, v, lam, it, grad_norm, degenerate, history)
            raise NonConvergence(f"line search failed at iteration {it}, grad_norm={grad_norm:.3e}")

        v, lam, e = trial, lam_t, e_t
        v, changed = rescale(v, e)
        if changed:
            lam, e = obj.value(v)
        if not degenerate and lower_clips >= opts.degenerate_after:
            # the amplitude keeps collapsing: switch to the small-amplitude limit
            degenerate = True
            obj = _Objective(grid, p, q, linear_only=True)
            v = v / v.max()
            lam, e = obj.value(v)
        history.append(lam)

    raise NonConvergence(
        f"no convergence in {opts.max_iters} iterations (grad_norm={grad_norm:.3e})"
    )


def _result(grid, v, lam, iterations, grad_norm, degenerate, history):
    scale = float(v.max())
    return EigenResult(
        lam=float(lam),
        u=ScalarField(grid, v / scale),
        iterations=iterations,
        grad_norm=float(grad_norm),
        degenerate=degenerate,
        amplitude=0.0 if degenerate else scale,
        history=tuple(history),
    )
