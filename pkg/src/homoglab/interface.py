"""Interface objects on the cylinder: transmission vector, interface correctors,
flux correctors and the measure potential.

Flux correctors
---------------
For a face-staggered flux ``B[i, j]`` (component i, column j) that is
discretely divergence free, a potential ``phi[k, i, j]`` antisymmetric in
(k, i) with ``sum_k D-_k phi[k, i, j] = B[i, j]`` is built in two parts:

* the tangential mean ``sigma_ij(y1)`` of rows ``i >= 2`` is integrated
  along the axis into ``g`` and placed in ``phi[1, i] = -phi[i, 1] = g``;
* the tangentially mean-free rest ``R`` solves ``Delta N = R`` and
  ``phi[k, i] = D+_k N_i - D+_i N_k``.

Both parts are exact at the discrete level.  On a truncated cylinder ``N`` is
zero at the ends, which perturbs the identity only within a boundary layer
decaying like ``exp(-2 pi dist)``.  ``phi`` lives on cell edges, at
``x + (e_k + e_i) h / 2``.
"""

from dataclasses import dataclass, field

import numpy as np

from .coeff import cutoff_minus, cutoff_plus
from .corrector import CorrectorSet, solve_decaying, tail_report
from .errors import CompatibilityFailure, ConfigError, GridError
from .linsolve import LinearProblem, solve
from .mesh import (CylinderGrid, Field, TorusGrid, avg_minus, divergence, dminus, dplus,
                   face_flux, laplacian_matrix, linear_flux, restrict_to_free, tile_axial)


# ---------------------------------------------------------------- transmission

def transmission_vector(A_hat_plus, A_hat_minus):
    """``theta_j = ((A_-)_1j - (A_+)_1j) / (A_+)_11``.

    Pass the matrices that enter the homogenised equation (weighted by the
    plateau constants) so that the normal flux of ``P_j`` is continuous.

    Raises
    ------
    ConfigError
        If ``(A_+)_11 <= 0``.
    """
    Ap, Am = np.asarray(A_hat_plus, float), np.asarray(A_hat_minus, float)
    if Ap[0, 0] <= 0:
        raise ConfigError("(A_hat_plus)_11 = %.3g is not positive" % Ap[0, 0])
    return (Am[0] - Ap[0]) / Ap[0, 0]


class PiecewiseLinearBasis:
    """``P_j(x) = x_j + theta_j max(x_1, 0)``.

    Parameters
    ----------
    theta : array_like of length d
    """

    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=float)
        self.d = self.theta.size
        if 1.0 + self.theta[0] <= 0:
            raise ConfigError("1 + theta_1 must be positive")

    def P(self, X):
        """Values ``(d,) + shape`` at coordinates X (broadcastable tuple)."""
        pos = np.maximum(X[0], 0.0)
        return [X[j] + self.theta[j] * pos for j in range(self.d)]

    def jacobian(self, x1):
        """``grad P`` (rows j, columns k): ``I + e_1 (x) theta`` transposed on x1 > 0."""
        J = np.eye(self.d)
        Jp = np.eye(self.d)
        Jp[:, 0] += self.theta               # d_1 P_j = delta_1j + theta_j
        return Jp if x1 > 0 else J

    def inverse_jacobian(self, x1):
        return np.linalg.inv(self.jacobian(x1))

    def grad(self, j, side):
        """``grad P_j`` on one side as a vector."""
        g = np.zeros(self.d)
        g[j] = 1.0
        if side == "+":
            g[0] += self.theta[j]
        return g

    def flux_jump(self, A_plus, A_minus):
        """``max_j |(A_+ grad P_j - A_- grad P_j) . e_1|``."""
        return max(abs((A_plus @ self.grad(j, "+"))[0] - (A_minus @ self.grad(j, "-"))[0])
                   for j in range(self.d))

    def tangential_jump(self):
        """Tangential derivatives of P are the same on both sides by construction."""
        return max(abs(self.grad(j, "+")[k] - self.grad(j, "-")[k])
                   for j in range(self.d) for k in range(1, self.d))


# ---------------------------------------------------------------- flux correctors

@dataclass
class FluxCorrector:
    """Antisymmetric potential of a divergence-free face flux.

    Attributes
    ----------
    grid : Grid
    phi : ndarray, shape ``(d, d, ncol) + grid.shape``
        Edge-located, ``phi[k, i, j] = -phi[i, k, j]``.
    N : ndarray, shape ``(d, ncol) + grid.shape``
        Poisson potentials of the mean-free part.
    g : ndarray, shape ``(d, ncol, n_axial)``
        Axial integrals of the tangential means.
    residual : float
        ``max |sum_k D-_k phi - B| / max |B|`` on the checked region.
    sup : float
        ``max |phi|`` on the checked region.
    """

    grid: object
    phi: np.ndarray
    N: np.ndarray
    g: np.ndarray
    residual: float
    sup: float
    info: dict = field(default_factory=dict)

    def node(self, j=0):
        """Node-valued matrix ``phi[:, :, j]`` by averaging the four surrounding edges."""
        d = self.grid.d
        out = np.zeros((d, d) + self.grid.shape)
        for k in range(d):
            for i in range(d):
                if i != k:
                    out[k, i] = avg_minus(avg_minus(self.phi[k, i, j], self.grid, k), self.grid, i)
        return out

    def antisymmetry_defect(self):
        return float(np.abs(self.phi + np.swapaxes(self.phi, 0, 1)).max())


def _tangential_mean(grid, u):
    return u.mean(axis=tuple(range(u.ndim - grid.d + 1, u.ndim)))


def _axial_shape(grid, v):
    return v.reshape(v.shape + (1,) * (grid.d - 1))


def _check_region(grid, margin):
    """Axial mask of nodes at least ``margin`` from the truncation ends."""
    if isinstance(grid, CylinderGrid) and grid.topology == "truncated-dirichlet":
        y1 = grid.axis_coords(0)
        return np.abs(y1) <= grid.L - margin
    return np.ones(grid.shape[0], dtype=bool)


def flux_potential(grid, B, tol=1e-10, margin=3.0, anchor=None, compat_tol=1e-8,
                   flux_scale=None):
    """Flux corrector of a face-staggered flux ``B[i, j]``.

    Parameters
    ----------
    grid : TorusGrid or truncated CylinderGrid
    B : ndarray, shape ``(d, ncol) + grid.shape``
    margin : float
        Axial distance from the truncation ends excluded from the residual
        and sup-norm checks.
    anchor : float, optional
        Left edge of the unit cell on which the axial integral ``g`` has zero
        mean.  Default: the first cell of the grid.
    flux_scale : float, optional
        Size the compatibility defects are measured against; default
        ``max |B|``.  Pass the coefficient size when ``B`` may be round-off.

    Raises
    ------
    CompatibilityFailure
        If the axial row is not a constant of zero section mean within
        ``compat_tol`` relative (the flux is not divergence free or carries a
        net current).
    """
    d = grid.d
    B = np.asarray(B, dtype=float)
    ncol = B.shape[1]
    periodic_axis = grid.periodic[0]
    scale = max(np.abs(B).max() if flux_scale is None else flux_scale, 1e-300)
    n_ax = grid.shape[0]
    h = grid.h

    sigma = _tangential_mean(grid, B)               # (d, ncol, n_ax)
    R = B - _axial_shape(grid, sigma)               # tangentially mean-free rest
    # axial row: constant in y1 for a divergence-free flux; its value is a net current
    net = sigma[0]
    inner = _check_region(grid, margin)
    current = float(np.abs(net[:, inner]).max()) / scale
    if current > compat_tol:
        raise CompatibilityFailure("axial flux has net section mean %.2e (relative)" % current)
    if periodic_axis:
        means = np.abs(B.reshape(d, ncol, -1).mean(axis=-1)).max() / scale
        if means > compat_tol:
            raise CompatibilityFailure("flux rows have nonzero mean %.2e (relative)" % means)

    # the reproduced flux is B minus its net current (and, on a torus, row means)
    removed = np.zeros_like(sigma)
    removed[0] = net
    if periodic_axis:
        removed[1:] = sigma[1:].mean(axis=-1, keepdims=True)
        sigma = sigma - removed * np.array([0.0] + [1.0] * (d - 1))[:, None, None]

    # axial integral of tangential means: D-_1 g = sigma
    g = np.zeros((d, ncol, n_ax))
    g[1:] = np.cumsum(sigma[1:], axis=-1) * h
    if anchor is None:
        i0 = 0
    else:
        i0 = grid.axial_index(anchor)
    n = int(round(1.0 / h))
    g[1:] -= g[1:, :, i0:i0 + n].mean(axis=-1, keepdims=True)

    N = np.zeros((d, ncol) + grid.shape)
    Lap = laplacian_matrix(grid)
    free = grid.free_index()
    if periodic_axis:
        K, ns = Lap, "constants"
    else:
        K, ns = restrict_to_free(grid, Lap), None
    iters = {}
    for i in range(d):
        for j in range(ncol):
            rhs = R[i, j].ravel()[free] if not periodic_axis else R[i, j].ravel()
            out = solve(LinearProblem(-K, -rhs, "spd", ns, tol, 20000, "lu"))
            vals = np.zeros(grid.n_nodes)
            vals[free if not periodic_axis else slice(None)] = out.x
            N[i, j] = vals.reshape(grid.shape)
            iters["N_%d%d" % (i + 1, j + 1)] = out.residual

    phi = np.zeros((d, d, ncol) + grid.shape)
    for k in range(d):
        for i in range(d):
            if i != k:
                phi[k, i] = dplus(N[i], grid, k) - dplus(N[k], grid, i)
    for i in range(1, d):
        gi = _axial_shape(grid, g[i])
        phi[0, i] += gi
        phi[i, 0] -= gi

    # identity check away from the truncation ends
    recon = np.stack([sum(dminus(phi[k, i], grid, k) for k in range(d)) for i in range(d)])
    target = B - _axial_shape(grid, removed)
    inner_strict = inner.copy()
    if not periodic_axis:
        inner_strict[0] = inner_strict[-1] = False
    sl = (slice(None),) * 2 + (inner_strict,)
    resid = float(np.abs(recon[sl] - target[sl]).max()) / scale
    sup = float(np.abs(phi[(slice(None),) * 3 + (inner_strict,)]).max())
    divN = sum(dminus(N[i], grid, i) for i in range(d))
    info = {"poisson_residuals": iters, "net_current": current,
            "removed_mean": float(np.abs(removed).max()) / scale,
            "divN_variation": float(np.ptp(divN[(slice(None),) + (inner_strict,)]))}
    return FluxCorrector(grid, phi, N, g, resid, sup, info)


def build_flux_corrector_periodic(B, grid=None, tol=1e-10, flux_scale=None):
    """Periodic flux corrector of a mean-zero, divergence-free face flux.

    Parameters
    ----------
    B : Field or ndarray
        Shape ``(d,) + shape`` (one column) or ``(d, ncol) + shape``.
    grid : TorusGrid, optional
    flux_scale : float, optional
        See ``flux_potential``.
    """
    grid = B.grid if isinstance(B, Field) else grid
    if not isinstance(grid, TorusGrid):
        raise GridError("periodic flux correctors live on torus grids")
    Bv = B.values if isinstance(B, Field) else np.asarray(B, dtype=float)
    if Bv.ndim == grid.d + 1:
        Bv = Bv[:, None]
    return flux_potential(grid, Bv, tol, flux_scale=flux_scale)


def build_drift_flux(b, grid, q_plus=None, q_minus=None, phi_plus=None, phi_minus=None,
                     tol=1e-10, margin=3.0, flux_scale=None):
    """Antisymmetric potential of the divergence-free drift on a truncated cylinder.

    Parameters
    ----------
    b : ndarray
        Face-staggered drift ``(d,) + grid.shape``.
    grid : CylinderGrid
        Truncated topology.
    q_plus, q_minus : float, optional
    phi_plus, phi_minus : FluxCorrector, optional
        Periodic potentials of the one-sided drifts on the torus of matching
        spacing; when given, the plateau shifts ``J_pm`` (constant
        antisymmetric matrices with ``phi_b -> q_pm phi_pm + J_pm``) are
        estimated on the unit cells at ``+-(L - margin)``.

    Returns
    -------
    FluxCorrector
        ``info['J_plus']``, ``info['J_minus']`` and ``info['plateau_gap']``
        when the periodic potentials are given.
    """
    if not isinstance(grid, CylinderGrid) or grid.topology != "truncated-dirichlet":
        raise GridError("cylinder flux correctors need a truncated cylinder grid")
    fc = flux_potential(grid, np.asarray(b)[:, None], tol, margin, anchor=-grid.L,
                        flux_scale=flux_scale)
    if phi_plus is not None:
        d = grid.d
        for key, q, per, y0 in (("plus", q_plus, phi_plus, grid.L - margin - 1),
                                ("minus", q_minus, phi_minus, -grid.L + margin)):
            tile = tile_axial(per.phi[:, :, 0], grid)
            sl = grid.cell_slice(y0)
            diff = fc.phi[:, :, 0, sl] - q * tile[:, :, sl]
            J = diff.reshape(d, d, -1).mean(axis=-1)
            gap = float(np.abs(diff - J[(...,) + (None,) * d]).max())
            fc.info["J_" + key] = J
            fc.info["plateau_gap_" + key] = gap
    return fc


# ---------------------------------------------------------------- interface corrector

def _cutoffs(grid):
    y1 = grid.axis_coords(0)[(slice(None),) + (None,) * (grid.d - 1)]
    return cutoff_plus(y1), cutoff_minus(y1)


def positive_part_flux(grid, M):
    """Face fluxes of ``max(y1, 0)``."""
    y1 = grid.axis_coords(0)[(slice(None),) + (None,) * (grid.d - 1)]
    u = np.broadcast_to(np.maximum(y1, 0.0), grid.shape).copy()
    return face_flux(grid, M, u)


def interface_fluxes(grid, M, basis, chi):
    """``F_i(P_j + chi_j)`` for every column j, shape ``(d, d) + shape`` indexed [i, j]."""
    d = grid.d
    fpos = positive_part_flux(grid, M)
    out = np.empty((d, d) + grid.shape)
    for j in range(d):
        out[:, j] = linear_flux(grid, M, j) + basis.theta[j] * fpos + face_flux(grid, M, chi[j])
    return out


def solve_interface_corrector(A, basis, chi_gt, chi_lt, tol=1e-10, tail_tol=1e-8,
                              support_tol=1e-10, preconditioner=None):
    """Interface correctors through the decaying unknown ``v``.

    With cutoffs ``psi_+``, ``psi_-`` the trial function
    ``w_k = P_k + psi_+ (chi_>,k + theta_k chi_>,1) + psi_- chi_<,k`` is
    already a solution outside ``|y1| <= 1``; ``v`` solves
    ``div(A grad v) = -div(A grad w_k)``, zero at the left end and flat at
    the right end, and
    ``chi_k = v + psi_+ (...) + psi_- chi_<,k``.

    Parameters
    ----------
    A : Field
        Matrix on a truncated cylinder.
    basis : PiecewiseLinearBasis
    chi_gt, chi_lt : CorrectorSet
        One-sided correctors on the same grid.

    Raises
    ------
    TailNotDecayed
    CompatibilityFailure
        Right-hand side not supported in ``|y1| <= 1`` (plus one stencil width),
        measured against ``max |flux| / h``.
    """
    grid = A.grid
    if not isinstance(grid, CylinderGrid) or grid.topology != "truncated-dirichlet":
        raise GridError("interface correctors need a truncated cylinder grid")
    d = grid.d
    M = A.values
    pp, pm = _cutoffs(grid)
    th = basis.theta
    fpos = positive_part_flux(grid, M)
    bmask = grid.boundary_mask()
    y1 = grid.axis_coords(0)
    outside = np.abs(y1) > 1.0 + 2.5 * grid.h
    outside[0] = outside[-1] = False
    chi = np.zeros((d,) + grid.shape)
    v_all = np.zeros((d,) + grid.shape)
    res, tails, cache = {}, {}, {}
    for k in range(d):
        corr = pp * (chi_gt.chi[k] + th[k] * chi_gt.chi[0]) + pm * chi_lt.chi[k]
        flux = linear_flux(grid, M, k) + th[k] * fpos + face_flux(grid, M, corr)
        rhs = divergence(grid, flux)
        rhs[bmask] = 0.0
        # relative to the individual stencil terms, so a vanishing rhs reads as zero
        spill = np.abs(rhs[outside]).max() / max(np.abs(flux).max() / grid.h, 1e-300)
        res["support_spill_%d" % (k + 1)] = float(spill)
        if spill > support_tol:
            raise CompatibilityFailure("interface right-hand side leaks outside |y1| <= 1: %.2e"
                                       % spill)
        v, out = solve_decaying(grid, M, -rhs, tol, preconditioner, cache)
        v_all[k] = v
        chi[k] = v + corr
        res["v_%d" % (k + 1)] = out.residual
        res["end_constant_%d" % (k + 1)] = out.kappa
        res["left_flux_%d" % (k + 1)] = out.left_flux
        tails["chi_%d" % (k + 1)] = tail_report(grid, v, chi[k], tail_tol,
                                                "interface corrector k=%d" % (k + 1))
    cs = CorrectorSet(grid, chi, "interface", res, tails, {"v": v_all})
    # residual of the corrector equation away from the ends
    F = interface_fluxes(grid, M, basis, chi)
    inner = _check_region(grid, 1.0)
    inner[0] = inner[-1] = False
    scale = np.abs(F).max()
    for k in range(d):
        r = divergence(grid, F[:, k])
        res["equation_%d" % (k + 1)] = float(np.abs(r[inner]).max() / scale)
    return cs


def homogenized_flux(grid, weighted_plus, weighted_minus, basis):
    """``(A_hat(x) grad P_j)_i`` on the faces, shape ``(d, d) + shape`` indexed [i, j].

    Nodes with ``y1 >= 0`` use the plus side; the axial row is the same on
    both sides, so the result is exactly divergence free.
    """
    d = grid.d
    y1 = grid.axis_coords(0)[(slice(None),) + (None,) * (grid.d - 1)]
    out = np.empty((d, d) + grid.shape)
    for j in range(d):
        fp = weighted_plus @ basis.grad(j, "+")
        fm = weighted_minus @ basis.grad(j, "-")
        for i in range(d):
            out[i, j] = np.where(y1 >= 0, fp[i], fm[i])
    return out


def build_interface_flux(A, chi, tensors, basis, tol=1e-10, margin=3.0):
    """Flux corrector of ``B_ij = (A_hat grad P_j)_i - (A grad(P_j + chi_j))_i``.

    Parameters
    ----------
    A : Field
        Matrix on a truncated cylinder.
    chi : CorrectorSet
        Interface correctors.
    tensors : EffectiveTensors
        Supplies the weighted one-sided matrices.
    basis : PiecewiseLinearBasis
    """
    grid = A.grid
    F = interface_fluxes(grid, A.values, basis, chi.chi)
    Bm = homogenized_flux(grid, tensors.weighted_plus, tensors.weighted_minus, basis) - F
    # B vanishes up to round-off when the cell problems are trivial
    fscale = max(np.abs(tensors.weighted_plus).max(), np.abs(tensors.weighted_minus).max())
    return flux_potential(grid, Bm, tol, margin, anchor=-grid.L, flux_scale=fscale)


# ---------------------------------------------------------------- measure potential

@dataclass
class MeasurePotential:
    """Potential with ``Delta phi_m = m - q(y1)`` on a truncated cylinder."""

    grid: object
    phi: np.ndarray
    grad_sup: float
    residual: float
    grad_profile: np.ndarray


def build_measure_potential(m, q_plus, q_minus, tol=1e-10, margin=1.0):
    """Solve ``Delta phi_m = m - q_+ 1{y1 > 0} - q_- 1{y1 < 0}``.

    The tangential mean of the right-hand side is integrated twice along the
    axis and the remainder is solved with zero ends.  No global
    compatibility condition is needed; ``grad phi_m`` is bounded because the
    tangential means of ``m - q`` have zero average over each period.

    Parameters
    ----------
    m : Field
        Measure on a truncated cylinder grid.

    Returns
    -------
    MeasurePotential
        ``grad_profile`` is the per-cell max of ``|grad phi_m|``.
    """
    grid = m.grid
    if not isinstance(grid, CylinderGrid) or grid.topology != "truncated-dirichlet":
        raise GridError("the measure potential is solved on a truncated cylinder")
    y1 = grid.axis_coords(0)
    q = np.where(y1 > 0, q_plus, np.where(y1 < 0, q_minus, 0.5 * (q_plus + q_minus)))
    f = m.values - _axial_shape(grid, q)
    h = grid.h
    sig = _tangential_mean(grid, f[None])[0]
    # D-D+ G = sigma: first D+ G = cumulative sum, then integrate again
    s1 = np.cumsum(sig) * h                         # s1[n] = (G[n+1] - G[n]) / h
    n = grid.n_cell
    s1 -= s1[:n].mean()
    G = np.concatenate([[0.0], np.cumsum(s1[:-1]) * h])
    rest = f - _axial_shape(grid, sig)
    K = restrict_to_free(grid, laplacian_matrix(grid))
    free = grid.free_index()
    out = solve(LinearProblem(-K, -rest.ravel()[free], "spd", None, tol, 20000, "lu"))
    u = np.zeros(grid.n_nodes)
    u[free] = out.x
    phi = u.reshape(grid.shape) + _axial_shape(grid, G)
    lap = sum(dminus(dplus(phi, grid, k), grid, k) for k in range(grid.d))
    inner = _check_region(grid, margin)
    inner[0] = inner[-1] = False
    res = float(np.abs(lap[inner] - f[inner]).max() / max(np.abs(f).max(), abs(q_plus), abs(q_minus)))
    grad = np.sqrt(sum(dplus(phi, grid, k) ** 2 for k in range(grid.d)))
    grad[-1] = 0.0
    ncell = (grid.shape[0] - 1) // n
    prof = grad[: ncell * n].reshape(ncell, -1).max(axis=1)
    return MeasurePotential(grid, phi, float(grad[inner].max()), res, prof)
