"""Uniform tensor lattice on the design box D = [0, L_0] x ... x [0, L_{d-1}].

Fields live on nodes, masks on cells. Node arrays have shape ``counts`` and
cell arrays shape ``counts - 1``; both are indexed ``[i, j]`` with ``i`` along
axis 0 (the x axis).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidDimension, TooCoarse


@dataclass(frozen=True)
class GridSpec:
    dim: int
    extents: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.extents, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.counts)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def volume(self) -> float:
        """|D|."""
        return float(np.prod(self.extents))

    @property
    def hmin(self) -> float:
        return min(self.h)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, L, n) for L, n in zip(self.extents, self.counts)]

    def node_coords(self) -> np.ndarray:
        """Array of shape ``(dim, *counts)`` with node positions."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def cell_centers(self) -> np.ndarray:
        """Array of shape ``(dim, *cell_shape)`` with cell-center positions."""
        mids = [0.5 * (a[1:] + a[:-1]) for a in self.axes()]
        return np.stack(np.meshgrid(*mids, indexing="ij"))

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean node array, False on the boundary of D."""
        mask = np.zeros(self.counts, dtype=bool)
        mask[tuple(slice(1, -1) for _ in self.counts)] = True
        mask.flags.writeable = False
        return mask

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Vertex-rule quadrature weight of every node (cell_volume inside D)."""
        w = np.zeros(self.counts)
        share = self.cell_volume / 2**self.dim
        for corner in corner_offsets(self.dim):
            w[corner_slices(self, corner)] += share
        w.flags.writeable = False
        return w

    def flat_index(self, index) -> int:
        return int(np.ravel_multi_index(tuple(index), self.counts))

    def node_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.counts))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "extents": list(self.extents), "counts": list(self.counts)}


def make_grid(dim: int, extents, counts) -> GridSpec:
    if dim not in (1, 2):
        raise InvalidDimension(f"dim must be 1 or 2, got {dim}")
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    counts = tuple(int(n) for n in np.atleast_1d(counts))
    if len(extents) != dim or len(counts) != dim:
        raise InvalidDimension(f"need {dim} extents and counts, got {extents}, {counts}")
    if any(n < 3 for n in counts):
        raise TooCoarse(f"every axis needs at least 3 nodes, got {counts}")
    if any(not np.isfinite(e) or e <= 0 for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    return GridSpec(dim, extents, counts)


def corner_offsets(dim: int) -> list[tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=dim))


def corner_slices(grid: GridSpec, corner) -> tuple[slice, ...]:
    """Node slice picking corner ``corner`` of every cell."""
    return tuple(slice(b, b + n - 1) for b, n in zip(corner, grid.counts))


def edge_slices(grid: GridSpec, corner, axis: int) -> tuple[slice, ...]:
    """Slice of the axis-``axis`` edge array for the edge through ``corner``."""
    return tuple(
        slice(0, n - 1) if a == axis else slice(b, b + n - 1)
        for a, (b, n) in enumerate(zip(corner, grid.counts))
    )
