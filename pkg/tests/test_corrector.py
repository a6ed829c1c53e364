import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab.coeff import build_family
from homoglab.corrector import (check_ellipticity, effective_matrix_div, solve_periodic_corrector_div,
                                tail_fit)
from homoglab.errors import ConfigError
from homoglab.harness import cell_tensors
from homoglab.mesh import Field, TorusGrid


def _const_field(g, M):
    return Field(g, np.broadcast_to(np.asarray(M)[:, :, None, None], (2, 2) + g.shape).copy())


def test_constant_matrix_has_zero_corrector():
    g = TorusGrid(2, 8)
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    A = _const_field(g, M)
    chi = solve_periodic_corrector_div(A)
    assert chi.sup_norm() < 1e-12
    np.testing.assert_allclose(effective_matrix_div(A, chi), M, atol=1e-12)


def test_constant_antisymmetric_part_passes_through():
    g = TorusGrid(2, 8)
    M = np.array([[1.0, 0.4], [-0.4, 1.0]])
    A = _const_field(g, M)
    chi = solve_periodic_corrector_div(A)
    np.testing.assert_allclose(effective_matrix_div(A, chi), M, atol=1e-12)


def test_effective_matrix_lies_between_means():
    rep = cell_tensors(build_family({"name": "divfree", "d": 2}), 16, sides=("+",))
    A = np.array(rep["plus"]["A_hat"])
    S = 0.5 * (A + A.T)
    assert np.linalg.eigvalsh(S).min() > 0
    assert rep["plus"]["corrector_residuals"]["divergence"]["chi_1"] < 1e-9


def test_cell_tensors_routes_agree_for_gradient_family():
    rep = cell_tensors(build_family({"name": "gradient", "d": 2}), 32, sides=("+",))
    assert rep["plus"]["route_gap"] < 1e-3 * np.abs(rep["plus"]["A_hat"]).max()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(1e-3, 10.0), st.integers(5, 30))
def test_tail_fit_recovers_geometric_rate(rate, c, n):
    e = c * np.exp(-rate * np.arange(n))
    assert tail_fit(e) == pytest.approx(rate, rel=1e-8)
    assert tail_fit(e[::-1], left_to_right=False) == pytest.approx(rate, rel=1e-8)


def test_tail_fit_needs_enough_cells():
    assert tail_fit([1.0, 1e-40, 1e-41]) is None


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(-0.5, 0.5))
def test_ellipticity_ratio(l1, l2, rot):
    c, s = np.cos(rot), np.sin(rot)
    Q = np.array([[c, -s], [s, c]])
    A = Q @ np.diag([l1, l2]) @ Q.T
    r = check_ellipticity(A, min(l1, l2), n=400)
    assert 1.0 - 1e-9 <= r <= max(l1, l2) / min(l1, l2) + 1e-9


def test_ellipticity_rejects_nonpositive_lambda():
    with pytest.raises(ConfigError):
        check_ellipticity(np.eye(2), 0.0)
