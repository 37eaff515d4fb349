import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freeshape.errors import InvalidDimension, TooCoarse
from freeshape.grid import make_grid


def test_line_of_five_nodes():
    g = make_grid(1, [1.0], [5])
    assert g.h == (0.25,)
    assert g.interior.sum() == 3


def test_smallest_2d_grid_has_one_interior_node():
    g = make_grid(2, [1.0, 1.0], [3, 3])
    assert g.interior.sum() == 1
    assert g.interior[1, 1]


def test_bad_dimension():
    with pytest.raises(InvalidDimension):
        make_grid(3, [1.0] * 3, [5] * 3)


def test_too_coarse():
    with pytest.raises(TooCoarse):
        make_grid(2, [1.0, 1.0], [2, 5])


def test_nonpositive_extent():
    with pytest.raises(ValueError):
        make_grid(1, [0.0], [5])


@given(st.integers(1, 2), st.lists(st.floats(0.1, 10.0), min_size=2, max_size=2),
       st.lists(st.integers(3, 40), min_size=2, max_size=2))
def test_invariants(dim, extents, counts):
    g = make_grid(dim, extents[:dim], counts[:dim])
    for h, n, L in zip(g.h, g.counts, g.extents):
        assert abs(h * (n - 1) - L) <= 1e-12 * L
    assert g.cell_volume > 0
    total = g.cell_volume * g.n_cells
    assert abs(total - np.prod(g.extents)) <= 1e-12 * np.prod(g.extents)
    # vertex weights integrate constants exactly too
    assert abs(g.node_weights.sum() - g.volume) <= 1e-12 * g.volume


@given(st.integers(3, 30), st.integers(3, 30), st.data())
def test_flat_index_roundtrip(nx, ny, data):
    g = make_grid(2, [1.0, 2.0], [nx, ny])
    flat = data.draw(st.integers(0, g.n_nodes - 1))
    assert g.flat_index(g.node_index(flat)) == flat
