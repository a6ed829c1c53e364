"""Cell problems, one-sided correctors and effective tensors.

Divergence-form correctors solve ``div(A (grad chi_k + e_k)) = 0`` with the
face-flux stencil of ``mesh``.  The effective matrix is the mean face flux

    A_hat_ij = < Av+_i(A_ij) + F_i(chi_j) >,

which is the discrete counterpart of ``<A> + <A grad chi>`` and satisfies
``A_hat(A.T) = A_hat(A).T`` exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .coeff import cutoff_minus, cutoff_plus, sample_side
from .errors import ConfigError, GridError, KernelDimensionSuspect, TailNotDecayed
from .linsolve import LinearProblem, solve
from .mesh import (CylinderGrid, Field, TorusGrid, dcen, dplus, divergence,
                   divergence_form_matrix, face_flux, linear_flux, nondivergence_matrix,
                   restrict_to_free, tile_axial)


def _values(x):
    return x.values if isinstance(x, Field) else np.asarray(x, dtype=float)


def pick_preconditioner(grid, requested=None):
    """'lu' for grids up to ~200k nodes in 2-D / 40k in 3-D, otherwise multigrid."""
    if requested:
        return requested
    limit = 200_000 if grid.d == 2 else 40_000
    return "lu" if grid.n_nodes <= limit else "amg"


@dataclass
class CorrectorSet:
    """Corrector fields ``chi[k]`` with their grid and solve diagnostics.

    Attributes
    ----------
    grid : Grid
    chi : ndarray of shape ``(d,) + grid.shape``
    kind : {'div-periodic', 'nondiv-periodic', 'one-sided', 'interface'}
    residuals : dict
    tail : dict, optional
        Decay fit for cylinder correctors.
    extra : dict
        Kind-specific arrays, e.g. the decaying part of a one-sided corrector.
    """

    grid: object
    chi: np.ndarray
    kind: str
    residuals: dict = field(default_factory=dict)
    tail: dict = None
    extra: dict = field(default_factory=dict)

    @property
    def fields(self):
        return [Field(self.grid, c) for c in self.chi]

    def grad(self, k):
        """Centred gradient of ``chi[k]``, shape ``(d,) + grid.shape``."""
        return np.stack([dcen(self.chi[k], self.grid, i) for i in range(self.grid.d)])

    def sup_norm(self):
        return float(np.abs(self.chi).max())


@dataclass
class EffectiveTensors:
    """Plateau constants, one-sided effective matrices and the transmission vector.

    ``A_hat_plus`` and ``A_hat_minus`` are the per-side tensors of unit-mass
    measures; the matrix of the homogenised equation is ``q_pm A_hat_pm``
    (plus a constant antisymmetric shift when the flux corrector has one,
    stored in ``weighted_plus``/``weighted_minus``).
    """

    A_hat_plus: np.ndarray
    A_hat_minus: np.ndarray
    q_plus: float = 1.0
    q_minus: float = 1.0
    theta: np.ndarray = None
    weighted_plus: np.ndarray = None
    weighted_minus: np.ndarray = None
    grid: dict = None
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A_hat_plus = np.asarray(self.A_hat_plus, dtype=float)
        self.A_hat_minus = np.asarray(self.A_hat_minus, dtype=float)
        if self.weighted_plus is None:
            self.weighted_plus = self.q_plus * self.A_hat_plus
        if self.weighted_minus is None:
            self.weighted_minus = self.q_minus * self.A_hat_minus
        self.weighted_plus = np.asarray(self.weighted_plus, dtype=float)
        self.weighted_minus = np.asarray(self.weighted_minus, dtype=float)

    @property
    def d(self):
        return self.A_hat_plus.shape[0]

    def A_hat(self, x1):
        """Piecewise-constant matrix field: weighted plus side for ``x1 > 0``."""
        x1 = np.asarray(x1, dtype=float)
        out = np.where((x1 > 0)[None, None], self.weighted_plus[(...,) + (None,) * x1.ndim],
                       self.weighted_minus[(...,) + (None,) * x1.ndim])
        return out

    def q(self, x1):
        return np.where(np.asarray(x1) > 0, self.q_plus, self.q_minus)

    def scaled(self, c):
        return EffectiveTensors(self.A_hat_plus, self.A_hat_minus, c * self.q_plus,
                                c * self.q_minus, self.theta, c * self.weighted_plus,
                                c * self.weighted_minus, self.grid, dict(self.residuals))

    def asymmetry(self):
        return {"plus": float(np.abs(self.A_hat_plus - self.A_hat_plus.T).max()),
                "minus": float(np.abs(self.A_hat_minus - self.A_hat_minus.T).max())}

    def report(self):
        """JSON-ready record with a fixed key order and 12 significant digits."""
        r = lambda a: np.round(np.asarray(a, dtype=float), 12).tolist()
        return {"A_hat_plus": r(self.A_hat_plus), "A_hat_minus": r(self.A_hat_minus),
                "q_plus": float(self.q_plus), "q_minus": float(self.q_minus),
                "theta": None if self.theta is None else r(self.theta),
                "weighted_plus": r(self.weighted_plus), "weighted_minus": r(self.weighted_minus),
                "asymmetry": self.asymmetry(), "grid": self.grid, "residuals": self.residuals}


# ---------------------------------------------------------------- periodic

def solve_periodic_corrector_div(A, grid=None, tol=1e-10, preconditioner=None):
    """Mean-zero correctors of ``div(A (grad chi_k + e_k)) = 0`` on a torus.

    Parameters
    ----------
    A : Field or ndarray
        Matrix field, not necessarily symmetric.
    grid : TorusGrid, optional
        Needed when ``A`` is an array.

    Returns
    -------
    CorrectorSet
    """
    grid = A.grid if isinstance(A, Field) else grid
    if not isinstance(grid, TorusGrid):
        raise GridError("periodic correctors live on torus grids")
    M = _values(A)
    d = grid.d
    sym = np.allclose(M, np.swapaxes(M, 0, 1), rtol=0, atol=1e-14 * np.abs(M).max())
    K = divergence_form_matrix(grid, M)
    pre = pick_preconditioner(grid, preconditioner)
    chi = np.zeros((d,) + grid.shape)
    res = {}
    for k in range(d):
        rhs = -divergence(grid, linear_flux(grid, M, k)).ravel()
        # -K is positive semidefinite for symmetric A
        out = solve(LinearProblem(-K, -rhs, "spd" if sym else "general", "constants", tol,
                                  20000, pre))
        chi[k] = out.x.reshape(grid.shape)
        res["chi_%d" % (k + 1)] = out.residual
    return CorrectorSet(grid, chi, "div-periodic", res)


def solve_periodic_corrector_nondiv(cs, grid, side="+", tol=1e-10):
    """Mean-zero solutions of ``a_ij D_ij chi_k + b_i D_i chi_k = -b_k`` on a torus.

    Parameters
    ----------
    cs : CoefficientSet or PeriodicSide
    grid : TorusGrid
    side : {'+', '-'}

    Raises
    ------
    KernelDimensionSuspect
        The bordered system is singular, so the homogeneous problem has a
        non-constant solution.
    """
    from .measure import _side_of
    s = _side_of(cs, side)
    at, bt = sample_side(s, grid)
    G = nondivergence_matrix(grid, at, bt)
    chi = np.zeros((grid.d,) + grid.shape)
    res = {}
    for k in range(grid.d):
        try:
            out = solve(LinearProblem(G, -bt[k].ravel(), "general", "constants", tol, 20000, "lu"))
        except RuntimeError as exc:
            raise KernelDimensionSuspect("nondivergence cell problem is singular: %s" % exc)
        chi[k] = out.x.reshape(grid.shape)
        res["chi_%d" % (k + 1)] = out.residual
        res["multiplier_%d" % (k + 1)] = out.multiplier
    return CorrectorSet(grid, chi, "nondiv-periodic", res)


def flux_matrix(grid, A, chi):
    """Face fluxes ``F_i(y_j + chi_j)``, shape ``(d, d) + grid.shape`` indexed [i, j]."""
    M = _values(A)
    d = grid.d
    out = np.empty((d, d) + grid.shape)
    for j in range(d):
        out[:, j] = linear_flux(grid, M, j) + face_flux(grid, M, chi[j])
    return out


def effective_matrix_div(A, chi, window=None):
    """Effective matrix ``<A> + <A grad chi>`` as the mean face flux.

    Parameters
    ----------
    A : Field
    chi : CorrectorSet
    window : tuple (y_lo, y_hi), optional
        Axial window on a cylinder grid (bracket average); the whole torus
        when omitted.
    """
    grid = chi.grid
    if isinstance(A, Field) and not grid.same_as(A.grid):
        raise GridError("grid mismatch between matrix and corrector")
    F = flux_matrix(grid, A, chi.chi)
    if window is None:
        if not isinstance(grid, TorusGrid):
            raise GridError("cylinder averages need an axial window")
        return F.reshape(grid.d, grid.d, -1).mean(axis=-1)
    i0, i1 = grid.axial_index(window[0]), grid.axial_index(window[1])
    if i0 < 0 or i1 >= grid.shape[0] or i1 <= i0:
        raise GridError("window %s outside the grid" % (window,))
    return F[:, :, i0:i1].reshape(grid.d, grid.d, -1).mean(axis=-1)


def effective_matrix_nondiv(a_tilde, m, chi):
    """Weighted quadrature of ``a_ij + 2 a_ik D_k chi_j + a_kl D_k chi_i D_l chi_j``.

    Parameters
    ----------
    a_tilde : Field
        Matrix field.
    m : Field
        Invariant measure of unit mass.
    chi : CorrectorSet
        Non-divergence correctors.
    """
    grid = chi.grid
    for f in (a_tilde, m):
        if not grid.same_as(f.grid):
            raise GridError("grid mismatch in effective_matrix_nondiv")
    a, mv = a_tilde.values, m.values
    d = grid.d
    G = np.stack([chi.grad(k) for k in range(d)])      # G[j, k] = D_k chi_j
    out = np.empty((d, d))
    w = grid.h ** d
    for i in range(d):
        for j in range(d):
            f = a[i, j].copy()
            for k in range(d):
                f += 2.0 * a[i, k] * G[j, k]
                for l in range(d):
                    f += a[k, l] * G[i, k] * G[j, l]
            out[i, j] = np.sum(f * mv) * w
    return out


# ---------------------------------------------------------------- one-sided

def one_sided_matrix(A, A_inf, side="+"):
    """Blend of a cylinder matrix with its periodic limit.

    Equals ``A`` where the cutoff is 1 (``y1 >= 1`` for '+') and exactly the
    tiled ``A_inf`` on the other side of the interface (``y1 <= 0``).

    Parameters
    ----------
    A : Field
        Matrix field on a cylinder grid.
    A_inf : Field
        Periodic limit on the torus of matching spacing.
    """
    grid = A.grid
    y1 = grid.axis_coords(0)[(slice(None),) + (None,) * (grid.d - 1)]
    s = cutoff_plus(y1) if side == "+" else cutoff_minus(y1)
    tile = tile_axial(A_inf.values, grid)
    return Field(grid, s * A.values + (1.0 - s) * tile)


def cell_energies(grid, u):
    """Per-unit-cell ``sum |D+ u|^2 h^d`` along the axis (last node excluded)."""
    g2 = sum(dplus(u, grid, i) ** 2 for i in range(grid.d))
    g2[-1] = 0.0                                   # wrapped difference at the end
    n = grid.n_cell
    ncell = (grid.shape[0] - 1) // n
    per = g2[: ncell * n].reshape((ncell, n) + grid.shape[1:])
    return per.reshape(ncell, -1).sum(axis=1) * grid.h ** grid.d


def tail_fit(energies, left_to_right=True, floor_rel=1e-30, min_cells=3):
    """Exponential decay rate of a per-cell energy sequence."""
    e = np.asarray(energies if left_to_right else energies[::-1], dtype=float)
    total = e.sum()
    k0 = int(np.argmax(e))
    seq = e[k0:]
    keep = seq > max(floor_rel * total, 1e-300)
    n = int(np.argmin(keep)) if not keep.all() else len(seq)
    if n < min_cells:
        return None
    j = np.arange(n)
    slope, _ = np.polyfit(j, np.log(seq[:n]), 1)
    return float(-slope)


def tail_report(grid, u, reference, tail_tol, what):
    """End-cell energy share and decay rates of a decaying field.

    The share test is skipped when the energy of ``u`` is below ``1e-20``
    times that of ``reference`` (``u`` is then round-off).

    Raises
    ------
    TailNotDecayed
    """
    e = cell_energies(grid, u)
    total = e.sum()
    ref = cell_energies(grid, reference).sum()
    negligible = total <= 1e-20 * max(ref, 1.0)
    ends = max(e[0], e[-1]) / total if total > 0 else 0.0
    out = {"end_share": float(ends), "negligible": bool(negligible),
           "rate_right": None if negligible else tail_fit(e[len(e) // 2:]),
           "rate_left": None if negligible else tail_fit(e[: len(e) // 2], False),
           "energies": e.tolist()}
    if not negligible and ends > tail_tol:
        raise TailNotDecayed("%s: end-cell energy share %.2e > %.1e; increase L"
                             % (what, ends, tail_tol))
    return out


def _dirichlet_solve(grid, M, rhs, tol, preconditioner):
    K = restrict_to_free(grid, divergence_form_matrix(grid, M))
    free = grid.free_index()
    out = solve(LinearProblem(-K, -rhs.ravel()[free], "general", None, tol, 20000,
                              pick_preconditioner(grid, preconditioner), method="gmres"))
    u = np.zeros(grid.n_nodes)
    u[free] = out.x
    return u.reshape(grid.shape), out


def section_flux(grid, M, u, face=-2):
    """Tangential mean of the axial face flux of ``u`` at one axial face."""
    return float(face_flux(grid, M, u)[0][face].mean())


def solve_decaying(grid, M, rhs, tol=1e-10, preconditioner=None, cache=None):
    """Solve ``div(M grad u) = rhs`` for a ``u`` that is flat at both ends.

    A decaying solution on the infinite cylinder tends to two different
    constants.  ``u`` is zero at the left end and free to take a constant
    ``kappa`` at the right end, with ``kappa`` fixed by a zero axial section
    flux there.  When ``rhs`` has zero net charge the flux then also vanishes
    at the left end.

    Returns
    -------
    u : ndarray
    out : SolveResult
        Of the main solve; ``out.kappa`` and ``out.left_flux`` are attached.
    """
    u0, out = _dirichlet_solve(grid, M, rhs, tol, preconditioner)
    if cache is not None and "ramp" in cache:
        psi = cache["ramp"]
    else:
        pb = np.zeros(grid.shape)
        pb[-1] = 1.0
        corr, _ = _dirichlet_solve(grid, M, -divergence(grid, face_flux(grid, M, pb)), tol,
                                   preconditioner)
        psi = pb + corr
        if cache is not None:
            cache["ramp"] = psi
    kappa = -section_flux(grid, M, u0) / section_flux(grid, M, psi)
    u = u0 + kappa * psi
    out.kappa = float(kappa)
    out.left_flux = section_flux(grid, M, u, face=1)
    return u, out


def solve_one_sided_corrector(A_gt, A_inf, chi_inf, tol=1e-10, tail_tol=1e-8,
                              preconditioner=None):
    """Corrector of a matrix that equals its periodic limit far away.

    Solves for ``zeta = chi_> - chi_inf``, zero at the left end and flat at
    the right end (see ``solve_decaying``)::

        div(A_> grad zeta) = -div((A_> - A_inf)(e_k + grad chi_inf,k))

    Parameters
    ----------
    A_gt : Field
        Matrix on a truncated cylinder.
    A_inf : Field
        Periodic limit on the torus of the same spacing.
    chi_inf : CorrectorSet
        Periodic correctors of ``A_inf``.
    tail_tol : float
        Largest allowed end-cell share of the energy of ``grad zeta``.

    Returns
    -------
    CorrectorSet
        ``chi`` holds ``chi_inf + zeta``; ``extra['zeta']`` the decaying part;
        ``tail`` the per-side fitted energy decay rates.

    Raises
    ------
    TailNotDecayed
    """
    grid = A_gt.grid
    if not isinstance(grid, CylinderGrid) or grid.topology != "truncated-dirichlet":
        raise GridError("one-sided correctors need a truncated cylinder grid")
    d = grid.d
    M = A_gt.values
    tileA = tile_axial(A_inf.values, grid)
    dA = M - tileA
    chi_t = tile_axial(chi_inf.chi, grid)
    zeta = np.zeros((d,) + grid.shape)
    res, tails, cache = {}, {}, {}
    bmask = grid.boundary_mask()
    for k in range(d):
        flux = linear_flux(grid, dA, k) + face_flux(grid, dA, chi_t[k])
        rhs = -divergence(grid, flux)
        rhs[bmask] = 0.0
        zeta[k], out = solve_decaying(grid, M, rhs, tol, preconditioner, cache)
        res["zeta_%d" % (k + 1)] = out.residual
        res["end_constant_%d" % (k + 1)] = out.kappa
        res["left_flux_%d" % (k + 1)] = out.left_flux
        tails["chi_%d" % (k + 1)] = tail_report(grid, zeta[k], chi_t[k], tail_tol,
                                                "one-sided corrector k=%d" % (k + 1))
    return CorrectorSet(grid, chi_t + zeta, "one-sided", res, tails, {"zeta": zeta})


def windowed_effective_matrix(A_gt, chi_gt, half_width):
    """Bracket average of the flux over ``[-N, N] x T^{d-1}``.

    The corrector's decaying part contributes ``O(1/N)`` to the tangential
    rows, so ``bracket_limit`` also returns a Richardson combination.
    """
    return effective_matrix_div(A_gt, chi_gt, (-half_width, half_width))


def bracket_limit(A_gt, chi_gt, half_width):
    """Raw window averages at ``N`` and ``N/2`` and their 1/N extrapolation."""
    full = windowed_effective_matrix(A_gt, chi_gt, half_width)
    half = windowed_effective_matrix(A_gt, chi_gt, half_width / 2.0)
    return {"raw": full, "half": half, "extrapolated": 2.0 * full - half}


def check_ellipticity(A_hat, lam, n=100, seed=0):
    """Smallest ``A xi . xi`` over random unit vectors divided by ``lam``."""
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n, A_hat.shape[0]))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    vals = np.einsum("ni,ij,nj->n", xi, A_hat, xi)
    if lam <= 0:
        raise ConfigError("lambda must be positive")
    return float(vals.min() / lam)
