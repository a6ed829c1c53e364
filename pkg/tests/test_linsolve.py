import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from homoglab.errors import KernelDimensionSuspect, NonConvergence
from homoglab.linsolve import LinearProblem, solve, solve_singular_adjoint
from homoglab.mesh import TorusGrid, laplacian_matrix


def _poisson_1d(n):
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n), format="csr")


@pytest.mark.parametrize("pre", ["lu", "jacobi", "amg", "none"])
def test_spd_solves_agree(pre):
    A = _poisson_1d(50)
    b = np.sin(np.arange(50))
    x, its, res = solve(LinearProblem(A, b, "spd", None, 1e-11, 2000, pre))
    assert np.abs(A @ x - b).max() < 1e-8
    assert res < 1e-10


def test_nonsymmetric_gmres():
    A = _poisson_1d(40) + sp.diags([0.3], [1], shape=(40, 40))
    b = np.ones(40)
    out = solve(LinearProblem(A, b, "general", None, 1e-10, 2000, "jacobi", method="gmres"))
    assert np.abs(A @ out.x - b).max() < 1e-7


@pytest.mark.parametrize("pre", ["lu", "jacobi"])
def test_constants_nullspace_returns_mean_free(pre):
    g = TorusGrid(2, 8)
    K = -laplacian_matrix(g)
    rhs = np.broadcast_to(np.cos(2 * np.pi * g.coords()[0]), g.shape).ravel()
    out = solve(LinearProblem(K, rhs, "spd", "constants", 1e-11, 2000, pre))
    assert abs(out.x.mean()) < 1e-12
    assert np.abs(K @ out.x - rhs).max() < 1e-8


def test_zero_rhs_is_trivial():
    out = solve(LinearProblem(_poisson_1d(5), np.zeros(5)))
    assert out.method == "trivial" and not out.x.any()


def test_nonconvergence_is_reported():
    A = _poisson_1d(400)
    with pytest.raises(NonConvergence):
        solve(LinearProblem(A, np.ones(400), "spd", None, 1e-12, 3, "none"))


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2 ** 31 - 1))
def test_adjoint_kernel_of_random_chain(n, seed):
    rng = np.random.default_rng(seed)
    R = rng.uniform(0.1, 1.0, (n, n))
    np.fill_diagonal(R, 0.0)
    G = sp.csr_matrix(R - np.diag(R.sum(axis=1)))
    m, info = solve_singular_adjoint(G, np.ones(n), 1.0)
    assert m.min() > 0
    assert m.sum() == pytest.approx(1.0)
    assert np.abs(G.T @ m).max() < 1e-10 * R.max()


def test_reducible_chain_is_flagged():
    block = np.array([[-1.0, 1.0], [1.0, -1.0]])
    G = sp.block_diag([block, block], format="csr")
    with pytest.raises(KernelDimensionSuspect):
        solve_singular_adjoint(G, np.ones(4), 1.0)
