"""Rasterized sets: supports, volume, face-count perimeter, densities, distances.

All perimeters are the anisotropic (l1) face-count perimeter. Ball membership
uses the cell-center rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateBall, GridMismatch, NoDomain, OutOfBox
from .fields import ScalarField, corner_values
from .grid import GridSpec, corner_offsets, corner_slices


@dataclass(frozen=True, eq=False)
class ShapeMask:
    grid: GridSpec
    cells: np.ndarray

    def __post_init__(self):
        c = np.array(self.cells, dtype=bool, copy=True)
        if c.shape != self.grid.cell_shape:
            raise ValueError(f"mask shape {c.shape} does not match cells {self.grid.cell_shape}")
        c.flags.writeable = False
        object.__setattr__(self, "cells", c)

    def __or__(self, other):
        _same_grid(self, other)
        return ShapeMask(self.grid, self.cells | other.cells)

    def __and__(self, other):
        _same_grid(self, other)
        return ShapeMask(self.grid, self.cells & other.cells)

    def __invert__(self):
        return ShapeMask(self.grid, ~self.cells)

    @property
    def count(self) -> int:
        return int(self.cells.sum())

    def is_empty(self) -> bool:
        return not self.cells.any()


@dataclass(frozen=True)
class BallSpec:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DegenerateBall(f"radius must be positive, got {self.radius}")


def _same_grid(m1: ShapeMask, m2: ShapeMask) -> None:
    if m1.grid != m2.grid:
        raise GridMismatch("masks live on different grids")


def full_mask(grid: GridSpec) -> ShapeMask:
    return ShapeMask(grid, np.ones(grid.cell_shape, dtype=bool))


def active_nodes(mask: ShapeMask) -> np.ndarray:
    """Nodes strictly inside the mask: interior of D and every adjacent cell masked."""
    grid = mask.grid
    act = grid.interior.copy()
    padded = np.pad(mask.cells, 1, constant_values=False)
    # node (i, j) touches padded cells (i + b) for b in {0,1}^d
    for b in corner_offsets(grid.dim):
        act &= padded[tuple(slice(1 - bi, 1 - bi + n) for bi, n in zip(b, grid.counts))]
    return act


def support_mask(u: ScalarField, tau: float = 1e-10) -> ShapeMask:
    """Cells whose largest corner |value| exceeds ``tau * max|u|``."""
    vmax = u.max_abs()
    if vmax == 0:
        return ShapeMask(u.grid, np.zeros(u.grid.cell_shape, dtype=bool))
    corner = np.abs(corner_values(u.grid, u.values)).max(axis=0)
    return ShapeMask(u.grid, corner > tau * vmax)


def volume(mask: ShapeMask) -> float:
    return mask.count * mask.grid.cell_volume


def face_midpoints(grid: GridSpec, axis: int) -> np.ndarray:
    """Midpoints of the faces normal to ``axis`` (including those on dD)."""
    coords = []
    for a in range(grid.dim):
        ax = np.linspace(0.0, grid.extents[a], grid.counts[a])
        coords.append(ax if a == axis else 0.5 * (ax[1:] + ax[:-1]))
    return np.stack(np.meshgrid(*coords, indexing="ij"))


def boundary_faces(mask: ShapeMask, axis: int) -> np.ndarray:
    """Faces normal to ``axis`` separating masked and unmasked cells (outside D is unmasked)."""
    pad = [(0, 0)] * mask.grid.dim
    pad[axis] = (1, 1)
    padded = np.pad(mask.cells, pad, constant_values=False)
    return np.diff(padded.astype(np.int8), axis=axis) != 0


def perimeter_in(mask: ShapeMask, region) -> float:
    """Face-count perimeter over the faces whose midpoint satisfies ``region``.

    ``region`` maps midpoints of shape (d, ...) to a boolean array. Each face
    is assigned to exactly one side of any partition of D, so perimeters over
    disjoint regions add up.
    """
    grid = mask.grid
    total = 0.0
    for a in range(grid.dim):
        faces = boundary_faces(mask, a)
        if region is not None:
            faces = faces & np.asarray(region(face_midpoints(grid, a)), dtype=bool)
        area = float(np.prod([grid.h[b] for b in range(grid.dim) if b != a]))
        total += faces.sum() * area
    return total


def perimeter(mask: ShapeMask, window: BallSpec | None = None) -> float:
    if window is None:
        return perimeter_in(mask, None)
    c = np.asarray(window.center, dtype=float)

    def inside(mid):
        dist2 = sum((mid[k] - c[k]) ** 2 for k in range(mask.grid.dim))
        return dist2 < window.radius**2
    return perimeter_in(mask, inside)


def _cells_in_ball(grid: GridSpec, ball: BallSpec) -> np.ndarray:
    xc = grid.cell_centers()
    dist2 = sum((xc[k] - ball.center[k]) ** 2 for k in range(grid.dim))
    return dist2 < ball.radius**2


def density_ratio(mask: ShapeMask, ball: BallSpec) -> float:
    inside = _cells_in_ball(mask.grid, ball)
    n = inside.sum()
    if n == 0:
        raise DegenerateBall(f"ball {ball} contains no cell of D")
    return float((inside & mask.cells).sum() / n)


def ball_stencil(grid: GridSpec, r: float) -> np.ndarray:
    """Cell offsets within distance < r of a cell center."""
    half = [int(np.ceil(r / h)) for h in grid.h]
    offs = np.meshgrid(*[np.arange(-k, k + 1) * h for k, h in zip(half, grid.h)], indexing="ij")
    return (sum(o**2 for o in offs) < r**2).astype(float)


def cell_ball_counts(cells: np.ndarray, grid: GridSpec, r: float) -> np.ndarray:
    """Number of True cells in the ball of radius r around every cell center."""
    st = ball_stencil(grid, r)
    return np.rint(ndimage.correlate(cells.astype(float), st, mode="constant", cval=0.0))


def density_ratios_at_cells(mask: ShapeMask, r: float) -> np.ndarray:
    """density_ratio evaluated at every cell center (vectorized)."""
    num = cell_ball_counts(mask.cells, mask.grid, r)
    den = cell_ball_counts(np.ones_like(mask.cells), mask.grid, r)
    return num / den


def boundary_cells(mask: ShapeMask) -> np.ndarray:
    """Masked cells with an unmasked face neighbour inside D (cells along dBox do not count)."""
    out = np.zeros(mask.grid.cell_shape, dtype=bool)
    padded = np.pad(mask.cells, 1, constant_values=True)
    core = tuple(slice(1, -1) for _ in range(mask.grid.dim))
    for a in range(mask.grid.dim):
        for s in (-1, 1):
            out |= ~np.roll(padded, s, axis=a)[core]
    return out & mask.cells


def reduced_boundary_proxy(mask: ShapeMask, r: float, delta: float) -> np.ndarray:
    """Boundary cells whose density at radius r lies in (delta, 1 - delta)."""
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    ratios = density_ratios_at_cells(mask, r)
    return boundary_cells(mask) & (ratios > delta) & (ratios < 1 - delta)


def distance_to_complement(mask: ShapeMask) -> np.ndarray:
    """Exact Euclidean distance from every node to the complement of the mask."""
    act = active_nodes(mask)
    if not act.any():
        return np.zeros(mask.grid.counts)
    return ndimage.distance_transform_edt(act, sampling=mask.grid.h)


def hausdorff_comp_distance(m1: ShapeMask, m2: ShapeMask) -> float:
    _same_grid(m1, m2)
    return float(np.max(np.abs(distance_to_complement(m1) - distance_to_complement(m2))))


def _check_inside(grid: GridSpec, lo, hi):
    tol = 1e-12 * max(grid.extents)
    for a in range(grid.dim):
        if lo[a] < -tol or hi[a] > grid.extents[a] + tol:
            raise OutOfBox(f"shape [{lo[a]}, {hi[a]}] leaves the box along axis {a}")


def make_ball(grid: GridSpec, center, radius: float) -> ShapeMask:
    center = tuple(float(c) for c in np.atleast_1d(center))
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    _check_inside(grid, [c - radius for c in center], [c + radius for c in center])
    if radius == 0:
        return ShapeMask(grid, np.zeros(grid.cell_shape, dtype=bool))
    return ShapeMask(grid, _cells_in_ball(grid, BallSpec(center, radius)))


def make_rect(grid: GridSpec, lo, hi) -> ShapeMask:
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    _check_inside(grid, lo, hi)
    xc = grid.cell_centers()
    cells = np.ones(grid.cell_shape, dtype=bool)
    for a in range(grid.dim):
        cells &= (xc[a] > lo[a]) & (xc[a] < hi[a])
    return ShapeMask(grid, cells)


def ball_with_cell_count(grid: GridSpec, center, n_cells: int) -> ShapeMask:
    """Rasterized ball around ``center`` holding exactly ``n_cells`` cells.

    The radius sits halfway between the n-th and (n+1)-th closest cell center,
    so an off-lattice center gives an exact count.
    """
    center = np.asarray(center, dtype=float)
    xc = grid.cell_centers().reshape(grid.dim, -1)
    dist = np.sort(np.sqrt(np.sum((xc - center[:, None]) ** 2, axis=0)))
    if not 0 < n_cells < dist.size:
        raise NoDomain(f"cannot place {n_cells} cells on this grid")
    radius = 0.5 * (dist[n_cells - 1] + dist[n_cells])
    return make_ball(grid, center, radius)


def outward_normals(mask: ShapeMask, points: np.ndarray, smoothing: float) -> np.ndarray:
    """Unit outward normals at ``points`` (shape (n, d)) from a smoothed indicator."""
    grid = mask.grid
    sigma = [smoothing / h for h in grid.h]
    smooth = ndimage.gaussian_filter(mask.cells.astype(float), sigma, mode="constant")
    grads = np.gradient(smooth, *grid.h) if grid.dim > 1 else [np.gradient(smooth, grid.h[0])]
    idx = np.stack(
        [np.clip(np.floor(points[:, a] / grid.h[a]).astype(int), 0, grid.cell_shape[a] - 1)
         for a in range(grid.dim)]
    )
    n = -np.stack([g[tuple(idx)] for g in grads], axis=1)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return n / norm


def cell_center_points(grid: GridSpec, cells: np.ndarray) -> np.ndarray:
    """Coordinates (n, d) of the centers of the True cells."""
    xc = grid.cell_centers()
    return np.stack([xc[a][cells] for a in range(grid.dim)], axis=1)


def corner_cells_union(mask: ShapeMask) -> np.ndarray:
    """Cells touching at least one active node."""
    act = active_nodes(mask)
    out = np.zeros(mask.grid.cell_shape, dtype=bool)
    for b in corner_offsets(mask.grid.dim):
        out |= act[corner_slices(mask.grid, b)]
    return out
