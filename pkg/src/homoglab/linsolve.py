"""Linear solvers for the discrete cell, cylinder and box problems.

``solve`` dispatches on symmetry: conjugate gradients for symmetric positive
problems and BiCGStab (GMRES on breakdown) otherwise.  Preconditioning is
Jacobi by default.  Smoothed-aggregation multigrid from pyamg is available
for large grids and a sparse LU path for small, ill-conditioned systems where
the identities we check need residuals near round-off.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (BreakdownDetected, KernelDimensionSuspect, NegativeMeasure,
                     NonConvergence)

PRECONDITIONERS = ("jacobi", "amg", "lu", "none")


@dataclass
class LinearProblem:
    """A linear system ``operator @ x = rhs``.

    Parameters
    ----------
    operator : sparse matrix or LinearOperator
    rhs : ndarray
    symmetry : {'spd', 'general'}
    nullspace : None, 'constants' or ndarray
        Right null vector of the operator, if any.
    tol : float
        Target for ``||A x - b|| / ||b||``.
    max_iter : int
    preconditioner : {'jacobi', 'amg', 'lu', 'none'}
    method : {'cg', 'bicgstab', 'gmres'}, optional
        Override the default Krylov method.
    """

    operator: object
    rhs: np.ndarray
    symmetry: str = "general"
    nullspace: object = None
    tol: float = 1e-10
    max_iter: int = 5000
    preconditioner: str = "jacobi"
    method: str = None
    x0: np.ndarray = None
    options: dict = field(default_factory=dict)


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float
    method: str
    multiplier: float = 0.0

    def __iter__(self):
        return iter((self.x, self.iterations, self.residual))


def _residual(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def _bordered(A, v):
    v = np.asarray(v, dtype=float).reshape(-1, 1)
    return sp.bmat([[A, sp.csr_matrix(v)], [sp.csr_matrix(v.T), None]], format="csc")


def _preconditioner(A, kind, symmetric):
    n = A.shape[0]
    if kind == "none":
        return None
    if kind == "jacobi":
        dg = np.asarray(A.diagonal()).copy()
        dg[np.abs(dg) < 1e-300] = 1.0
        inv = 1.0 / dg
        return spla.LinearOperator((n, n), matvec=lambda r: inv * r, dtype=float)
    if kind == "amg":
        import pyamg
        S = A if symmetric else 0.5 * (A + A.T)
        ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(S), symmetry="symmetric",
                                               max_coarse=500)
        return ml.aspreconditioner(cycle="V")
    raise ValueError("unknown preconditioner %r" % (kind,))


def _krylov(A, b, method, M, tol, max_iter, x0):
    count = [0]

    def cb(*_):
        count[0] += 1

    if method == "cg":
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M, x0=x0, callback=cb)
    elif method == "bicgstab":
        x, info = spla.bicgstab(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M, x0=x0, callback=cb)
    elif method == "gmres":
        x, info = spla.gmres(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M, x0=x0,
                             restart=60, callback=cb, callback_type="pr_norm")
    else:
        raise ValueError("unknown Krylov method %r" % (method,))
    return x, info, count[0]


def solve(problem):
    """Solve a LinearProblem.

    Returns
    -------
    SolveResult
        Unpacks as ``(solution, iterations, residual)``.  For a constants
        nullspace the solution has zero mean.

    Raises
    ------
    NonConvergence
        Residual above ``tol`` after ``max_iter`` iterations.
    BreakdownDetected
        BiCGStab broke down and ``options['fallback']`` is False.
    """
    A = problem.operator
    b = np.asarray(problem.rhs, dtype=float).ravel()
    n = b.size
    if problem.preconditioner not in PRECONDITIONERS:
        raise ValueError("unknown preconditioner %r" % (problem.preconditioner,))
    if not np.any(b):
        return SolveResult(np.zeros(n), 0, 0.0, "trivial")

    ns = problem.nullspace
    if isinstance(ns, str):
        if ns != "constants":
            raise ValueError("nullspace must be None, 'constants' or a vector")
        ns = np.ones(n)
    spd = problem.symmetry == "spd"
    multiplier = 0.0
    # a direct factorisation needs a nonsingular matrix: border the kernel
    bordered = ns is not None and (not spd or problem.preconditioner == "lu")

    if ns is not None and not bordered:
        # range is orthogonal to the kernel: project the data
        ns = ns / np.linalg.norm(ns)
        b = b - ns * (ns @ b)
        if not np.any(b):
            return SolveResult(np.zeros(n), 0, 0.0, "trivial")
        Aop, rhs = A, b
    elif bordered:
        # bordered system fixes the gauge and absorbs any incompatibility
        Aop = _bordered(sp.csr_matrix(A), ns)
        rhs = np.concatenate([b, [0.0]])
    else:
        Aop, rhs = A, b

    if problem.preconditioner == "lu":
        lu = spla.splu(sp.csc_matrix(Aop))
        x = lu.solve(rhs)
        x = x + lu.solve(rhs - Aop @ x)
        its, method = 1, "lu"
    else:
        method = problem.method or ("cg" if spd else "bicgstab")
        M = _preconditioner(sp.csr_matrix(Aop), problem.preconditioner, spd)
        x, info, its = _krylov(Aop, rhs, method, M, problem.tol, problem.max_iter, problem.x0)
        if info < 0 or not np.all(np.isfinite(x)):
            if not problem.options.get("fallback", True) or method == "gmres":
                raise BreakdownDetected("%s broke down (info=%d)" % (method, info))
            method = "gmres"
            x, info, its2 = _krylov(Aop, rhs, method, M, problem.tol, problem.max_iter, None)
            its += its2

    res = _residual(Aop, x, rhs)
    if res > problem.tol and problem.preconditioner != "lu":
        raise NonConvergence("%s stopped at relative residual %.3e > %.1e after %d iterations"
                             % (method, res, problem.tol, its))
    if bordered:
        multiplier = float(x[-1])
        x = x[:-1]
        res = _residual(A, x, b - multiplier * ns)
    if ns is not None:
        x = x - (ns @ x) / (ns @ ns) * ns
    return SolveResult(x, its, float(res), method, multiplier)


def solve_singular_adjoint(generator, weights, target=1.0, tol=1e-10, preconditioner="lu",
                           check_kernel=True):
    """Positive kernel vector of ``generator.T`` with ``weights @ m = target``.

    Solves the bordered system ``[G^T w; w^T 0] [m; mu] = [0; target]``.

    Parameters
    ----------
    generator : sparse matrix
        Discrete generator ``G``; its transpose must have a one-dimensional
        kernel.
    weights : ndarray
        Normalisation weights, e.g. ``h**d`` on every node.
    target : float
    tol : float
    preconditioner : str
        'lu' (default) or a Krylov preconditioner, solved with GMRES.
    check_kernel : bool
        Repeat the solve with different weights and require proportional
        answers.

    Returns
    -------
    m : ndarray
    info : dict
        ``{'kernel_residual', 'multiplier', 'uniqueness_gap'}``.

    Raises
    ------
    KernelDimensionSuspect, NegativeMeasure
    """
    GT = sp.csr_matrix(generator).T.tocsr()
    w = np.asarray(weights, dtype=float).ravel()
    n = w.size

    def one(wv):
        B = _bordered(GT, wv)
        rhs = np.zeros(n + 1)
        rhs[-1] = target
        if preconditioner == "lu":
            try:
                lu = spla.splu(B)
            except RuntimeError as exc:
                # the bordered matrix is singular exactly when the kernel is not simple
                raise KernelDimensionSuspect("bordered adjoint system is singular (%s)" % exc)
            x = lu.solve(rhs)
            x = x + lu.solve(rhs - B @ x)
        else:
            res = solve(LinearProblem(B, rhs, "general", None, tol, 20000, preconditioner,
                                      method="gmres"))
            x = res.x
        return x[:n], x[n]

    m, mu = one(w)
    # residual relative to the size of the individual stencil terms
    row_scale = np.asarray(abs(GT).sum(axis=1)).ravel().max()
    kres = np.abs(GT @ m).max() / max(row_scale * np.abs(m).max(), 1e-300)
    info = {"kernel_residual": float(kres), "multiplier": float(mu)}
    if kres > 10 * tol:
        raise KernelDimensionSuspect("transposed generator residual %.3e exceeds %.1e"
                                     % (kres, 10 * tol))
    gap = 0.0
    if check_kernel:
        ramp = np.linspace(0.5, 1.5, n)
        m2, _ = one(w * ramp)
        m2 = m2 * target / (w @ m2)
        gap = float(np.abs(m2 - m).max() / np.abs(m).max())
        if gap > max(10 * tol, 1e-9):
            raise KernelDimensionSuspect("normalisations disagree by %.3e: kernel is not one-dimensional"
                                         % gap)
    info["uniqueness_gap"] = gap
    mmax = np.abs(m).max()
    if m.min() < -1e-8 * mmax:
        raise NegativeMeasure("min m = %.3e with max m = %.3e" % (m.min(), mmax))
    return m, info
