import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from homoglab.errors import GridError
from homoglab.mesh import (BoxGrid, CylinderGrid, Field, TorusGrid, apply_divergence_form,
                           build_cylinder_grid, build_torus_grid, dcen, divergence,
                           divergence_form_matrix, dminus, dplus, face_flux, integrate,
                           laplacian_matrix, tile_axial)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (8, 8), elements=finite), arrays(float, (8, 8), elements=finite),
       st.integers(0, 1))
def test_summation_by_parts_on_torus(u, v, k):
    g = TorusGrid(2, 8)
    lhs = np.sum(u * dminus(v, g, k))
    rhs = -np.sum(dplus(u, g, k) * v)
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + np.abs(u).sum() * np.abs(v).sum()))


@settings(max_examples=20, deadline=None)
@given(arrays(float, (6, 6), elements=finite), arrays(float, (6, 6), elements=finite))
def test_central_difference_is_skew(u, v):
    g = TorusGrid(2, 6)
    for k in range(2):
        a, b = np.sum(u * dcen(v, g, k)), -np.sum(dcen(u, g, k) * v)
        assert a == pytest.approx(b, abs=1e-9 * (1 + np.abs(u).sum() * np.abs(v).sum()))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_sparse_divergence_form_matches_stencil(seed):
    rng = np.random.default_rng(seed)
    g = TorusGrid(2, 6)
    M = rng.standard_normal((2, 2) + g.shape)
    u = rng.standard_normal(g.shape)
    direct = divergence(g, face_flux(g, M, u))
    sparse = (divergence_form_matrix(g, M) @ u.ravel()).reshape(g.shape)
    np.testing.assert_allclose(sparse, direct, atol=1e-10 * np.abs(direct).max())


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 2 ** 31 - 1))
def test_tile_is_periodic_on_cylinder(L, n, seed):
    g = CylinderGrid(2, L, n)
    cell = np.random.default_rng(seed).standard_normal((n, n))
    t = tile_axial(cell, g)
    assert t.shape == g.shape
    np.testing.assert_array_equal(t[:-n], t[n:])
    # node at y = 0 carries the cell origin
    np.testing.assert_array_equal(t[g.axial_index(0.0)], cell[0])


def test_tile_rejects_wrong_cell_size():
    with pytest.raises(GridError):
        tile_axial(np.zeros((3, 3)), CylinderGrid(2, 2, 4))


def test_laplacian_kills_constants_and_is_symmetric():
    g = TorusGrid(3, 4)
    Lap = laplacian_matrix(g)
    assert np.abs(Lap @ np.ones(g.n_nodes)).max() < 1e-12
    assert abs(Lap - Lap.T).max() < 1e-12


def test_linear_function_is_reproduced_exactly():
    g = BoxGrid(2, 1 / 8)
    X = g.coords()
    u = Field(g, 2.0 * X[0] - X[1] * 0.0)
    M = Field(g, np.broadcast_to(np.array([[2.0, 0.5], [0.5, 1.0]])[:, :, None, None],
                                 (2, 2) + g.shape).copy())
    out = apply_divergence_form(M, u)
    assert np.abs(out.values[1:-1]).max() < 1e-10


def test_integrate_constant_and_windows():
    assert integrate(Field(TorusGrid(2, 8), np.ones((8, 8)))) == pytest.approx(1.0)
    g = CylinderGrid(2, 3, 4)
    one = np.ones(g.shape)
    assert integrate((g, one), window=-3) == pytest.approx(1.0)
    assert integrate((g, one), window=2) == pytest.approx(1.0)


def test_field_grid_mismatch_raises():
    a = Field(TorusGrid(2, 4), np.zeros((2, 2, 4, 4)))
    b = Field(TorusGrid(2, 8), np.zeros((8, 8)))
    with pytest.raises(GridError):
        apply_divergence_form(a, b)


def test_builders_validate():
    assert build_torus_grid(2, 8).shape == (8, 8)
    assert build_cylinder_grid(2, 2, 4).shape == (17, 4)
    with pytest.raises(GridError):
        build_torus_grid(4, 8)
    with pytest.raises(GridError):
        build_cylinder_grid(2, 0, 4)
