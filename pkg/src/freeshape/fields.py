"""Nodal fields, discrete gradients and the energies of the Rayleigh quotient.

Quadrature is the vertex rule on every cell: each of the ``2**d`` corners of a
cell carries weight ``cell_volume / 2**d``. At a corner the gradient sample is
made of the one-sided differences along the cell edges meeting there, and the
value sample is the nodal value. For ``p = 2`` this reproduces the 5-point
Laplacian, and the discrete functionals below are differentiated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import BadExponents, ZeroDenominator
from .grid import GridSpec, corner_offsets, corner_slices, edge_slices

# dq below this (relative to the nodal weight scale) counts as a zero field
DQ_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node values over a grid; the Dirichlet condition on dD is imposed here."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.grid.counts:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.counts}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v[~self.grid.interior] = 0.0
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __mul__(self, s: float) -> ScalarField:
        return ScalarField(self.grid, self.values * s)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class EnergyBreakdown:
    ep: float  # (1/p) int |grad u|^p
    e2: float  # (1/2) int |grad u|^2
    dq: float  # (1/q) int |u|^q

    @property
    def numerator(self) -> float:
        return self.ep + self.e2


def check_exponents(p: float, q: float, diagnostic: bool = False) -> None:
    if diagnostic and p == 2 and q == 2:
        return
    if not (p > q >= 2):
        raise BadExponents(
            f"need p > q >= 2 (or p = q = 2 in diagnostic mode), got p={p}, q={q}"
        )


# -- discrete gradient -------------------------------------------------------


def edge_differences(grid: GridSpec, v: np.ndarray) -> list[np.ndarray]:
    return [np.diff(v, axis=a) / grid.h[a] for a in range(grid.dim)]


def corner_gradients(grid: GridSpec, v: np.ndarray) -> np.ndarray:
    """Gradient samples, shape ``(2**d, d, *cell_shape)``."""
    diffs = edge_differences(grid, v)
    out = np.empty((2**grid.dim, grid.dim) + grid.cell_shape)
    for k, corner in enumerate(corner_offsets(grid.dim)):
        for a in range(grid.dim):
            out[k, a] = diffs[a][edge_slices(grid, corner, a)]
    return out


def corner_values(grid: GridSpec, v: np.ndarray) -> np.ndarray:
    """Nodal values at the cell corners, shape ``(2**d, *cell_shape)``."""
    return np.stack([v[corner_slices(grid, c)] for c in corner_offsets(grid.dim)])


def corner_positions(grid: GridSpec) -> np.ndarray:
    """Positions of the corner samples, shape ``(2**d, d, *cell_shape)``."""
    x = grid.node_coords()
    return np.stack(
        [np.stack([x[a][corner_slices(grid, c)] for a in range(grid.dim)])
         for c in corner_offsets(grid.dim)]
    )


def corner_adjoint(grid: GridSpec, flux: np.ndarray) -> np.ndarray:
    """Transpose of :func:`corner_gradients` applied to per-sample vectors."""
    out = np.zeros(grid.counts)
    for a in range(grid.dim):
        edge = np.zeros(tuple(n - 1 if i == a else n for i, n in enumerate(grid.counts)))
        for k, corner in enumerate(corner_offsets(grid.dim)):
            edge[edge_slices(grid, corner, a)] += flux[k, a]
        edge /= grid.h[a]
        hi = [slice(None)] * grid.dim
        lo = [slice(None)] * grid.dim
        hi[a] = slice(1, None)
        lo[a] = slice(None, -1)
        out[tuple(hi)] += edge
        out[tuple(lo)] -= edge
    return out


def gradient_field(u: ScalarField) -> np.ndarray:
    """Cell-centered gradient (mean of the corner samples), shape ``(d, *cell_shape)``."""
    return corner_gradients(u.grid, u.values).mean(axis=0)


# -- energies and their gradients ---------------------------------------------


def _sample_weight(grid: GridSpec) -> float:
    return grid.cell_volume / 2**grid.dim


def _power_abs(x: np.ndarray, e: float) -> np.ndarray:
    """|x|^e with 0^e = 0 for e > 0."""
    return np.abs(x) ** e


def breakdown(grid: GridSpec, v: np.ndarray, p: float, q: float) -> EnergyBreakdown:
    g = corner_gradients(grid, v)
    gn2 = np.sum(g * g, axis=1)
    w = _sample_weight(grid)
    ep = w * np.sum(gn2 ** (p / 2)) / p
    e2 = w * np.sum(gn2) / 2
    dq = float(np.sum(grid.node_weights * _power_abs(v, q))) / q
    return EnergyBreakdown(float(ep), float(e2), dq)


def flux_weights(grid: GridSpec, v: np.ndarray, p: float, linear_coef: float = 1.0,
                 p_coef: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Corner gradients and their coefficients ``p_coef |g|^(p-2) + linear_coef``."""
    g = corner_gradients(grid, v)
    gn2 = np.sum(g * g, axis=1)
    coef = p_coef * gn2 ** ((p - 2) / 2) + linear_coef
    return g, coef


def grad_numerator(grid: GridSpec, v: np.ndarray, p: float, linear_coef: float = 1.0,
                   p_coef: float = 1.0) -> np.ndarray:
    """Nodal gradient of ``p_coef*ep + linear_coef*e2``: the discrete -Delta_p u - Delta u."""
    g, coef = flux_weights(grid, v, p, linear_coef, p_coef)
    return corner_adjoint(grid, _sample_weight(grid) * coef[:, None] * g)


def grad_mass(grid: GridSpec, v: np.ndarray, q: float) -> np.ndarray:
    """Nodal gradient of dq: the lumped |u|^(q-2) u."""
    return grid.node_weights * _power_abs(v, q - 2) * v


def energies(u: ScalarField, p: float, q: float, diagnostic: bool = False) -> EnergyBreakdown:
    check_exponents(p, q, diagnostic)
    return breakdown(u.grid, u.values, p, q)


def _quotient_parts(u: ScalarField, p, q, diagnostic):
    e = energies(u, p, q, diagnostic)
    if e.dq <= DQ_FLOOR:
        raise ZeroDenominator("the field vanishes; the Rayleigh quotient is undefined")
    return e


def rayleigh_quotient(u: ScalarField, p: float, q: float, diagnostic: bool = False) -> float:
    e = _quotient_parts(u, p, q, diagnostic)
    return e.numerator / e.dq


def grad_rayleigh(u: ScalarField, p: float, q: float, diagnostic: bool = False) -> ScalarField:
    e = _quotient_parts(u, p, q, diagnostic)
    num = grad_numerator(u.grid, u.values, p)
    den = grad_mass(u.grid, u.values, q)
    return ScalarField(u.grid, (num * e.dq - e.numerator * den) / e.dq**2)


def amplitude_derivative(e: EnergyBreakdown, p: float, q: float) -> float:
    """d/dt R(t u) at t = 1, from the breakdown alone."""
    return (p * e.ep + 2 * e.e2 - q * e.numerator) / e.dq


def J_value(u: ScalarField, lambda_c: float, p: float, q: float) -> float:
    """Smooth part J(u) = ep + e2 - lambda_c dq."""
    e = breakdown(u.grid, u.values, p, q)
    return e.numerator - lambda_c * e.dq


def grad_J(u: ScalarField, lambda_c: float, p: float, q: float) -> ScalarField:
    v = u.values
    return ScalarField(u.grid, grad_numerator(u.grid, v, p) - lambda_c * grad_mass(u.grid, v, q))


def weak_form_residual(u: ScalarField, lam: float, p: float, q: float) -> ScalarField:
    """int (|grad u|^(p-2)+1) grad u . grad phi_i - lam int |u|^(q-2) u phi_i, per node."""
    return grad_J(u, lam, p, q)


# -- preconditioner ------------------------------------------------------------


def secant_stiffness(grid: GridSpec, v: np.ndarray, p: float, nodes: np.ndarray,
                     linear_coef: float = 1.0, p_coef: float = 1.0) -> sp.csc_matrix:
    """Weighted 5-point matrix A with A(v) v = grad of the numerator, on ``nodes``.

    ``nodes`` is a flat index array; rows/columns outside it are dropped (those
    nodes are held at zero).
    """
    _, coef = flux_weights(grid, v, p, linear_coef, p_coef)
    wcoef = _sample_weight(grid) * coef
    local = -np.ones(grid.n_nodes, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    flat = np.arange(grid.n_nodes).reshape(grid.counts)
    rows, cols, vals = [], [], []
    diag = np.zeros(len(nodes))
    for a in range(grid.dim):
        shape = tuple(n - 1 if i == a else n for i, n in enumerate(grid.counts))
        om = np.zeros(shape)
        for k, corner in enumerate(corner_offsets(grid.dim)):
            om[edge_slices(grid, corner, a)] += wcoef[k]
        om /= grid.h[a] ** 2
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        i = local[flat[tuple(lo)].ravel()]
        j = local[flat[tuple(hi)].ravel()]
        om = om.ravel()
        np.add.at(diag, i[i >= 0], om[i >= 0])
        np.add.at(diag, j[j >= 0], om[j >= 0])
        both = (i >= 0) & (j >= 0)
        rows += [i[both], j[both]]
        cols += [j[both], i[both]]
        vals += [-om[both], -om[both]]
    rows.append(np.arange(len(nodes)))
    cols.append(np.arange(len(nodes)))
    vals.append(diag)
    n = len(nodes)
    return sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
