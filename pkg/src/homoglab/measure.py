"""Invariant measures of the periodic and interface generators.

The periodic measure solves ``G^T m = 0`` on the unit torus with unit mass.
The interface measure is computed on [-2L, 2L] x T^{d-1} with mirror ends
(default) or on the double-interface torus of axial period 4L.  Plateau
constants are read off in unit cells centred at ``y1 = +-L``, halfway between
the interface and the ends.

Mirror ends make the net axial probability current vanish, as it does for the
bounded measure on the infinite cylinder.  The double torus allows a
circulating current whenever the two interfaces are not mirror images, which
adds a linear trend to the plateaus.
"""

from dataclasses import dataclass, field

import numpy as np

from .coeff import CoefficientSet, PeriodicSide, sample_interface, sample_side
from .errors import (CenteringDefect, ConfigError, FitUnstable, GridError,
                     PlateauNotReached)
from .linsolve import solve_singular_adjoint
from .mesh import (CylinderGrid, Field, TorusGrid, integrate, nondivergence_matrix,
                   tile_axial)


@dataclass
class InvariantMeasure:
    """Invariant measure with its normalisation and plateau data.

    Attributes
    ----------
    m : Field
    normalization : dict
    q_plus, q_minus : float
        Plateau constants (1 for a periodic measure).
    tail : dict, optional
        Output of ``tail_decay_report`` for cylinder measures.
    residuals : dict
    m_plus, m_minus : InvariantMeasure, optional
        Periodic one-sided measures used for the plateau comparison.
    """

    m: Field
    normalization: dict
    q_plus: float = 1.0
    q_minus: float = 1.0
    tail: dict = None
    residuals: dict = field(default_factory=dict)
    m_plus: object = None
    m_minus: object = None

    @property
    def grid(self):
        return self.m.grid

    @property
    def tail_rate(self):
        if not self.tail:
            return None
        return self.tail.get("rate")

    def scaled(self, c):
        """Same measure multiplied by ``c`` (plateaus scale, periodic parts do not)."""
        norm = dict(self.normalization)
        norm["target"] = norm.get("target", 1.0) * c
        return InvariantMeasure(Field(self.grid, c * self.m.values), norm, c * self.q_plus,
                                c * self.q_minus, self.tail, dict(self.residuals),
                                self.m_plus, self.m_minus)

    def report(self):
        """JSON-ready record with a fixed key order."""
        out = {"q_plus": self.q_plus, "q_minus": self.q_minus,
               "tail_rate": self.tail_rate, "residuals": self.residuals,
               "normalization": self.normalization, "grid": self.grid.describe()}
        if self.tail:
            out["tail"] = {k: self.tail[k] for k in ("rate", "rate_plus", "rate_minus",
                                                    "fit_rms", "degenerate")}
        return out


def _side_of(cs, side):
    if isinstance(cs, PeriodicSide):
        return cs
    if isinstance(cs, CoefficientSet):
        return cs.side(side)
    raise ConfigError("expected a CoefficientSet or PeriodicSide")


def solve_periodic_measure(cs, grid, side="+", tol=1e-10):
    """Invariant measure of one periodic side, normalised to unit mass.

    Parameters
    ----------
    cs : CoefficientSet or PeriodicSide
    grid : TorusGrid
    side : {'+', '-'}

    Returns
    -------
    InvariantMeasure
    """
    if not isinstance(grid, TorusGrid):
        raise GridError("periodic measures live on torus grids")
    s = _side_of(cs, side)
    at, bt = sample_side(s, grid)
    G = nondivergence_matrix(grid, at, bt)
    m, info = solve_singular_adjoint(G, np.full(grid.n_nodes, grid.h ** grid.d), 1.0, tol)
    return InvariantMeasure(Field(grid, m.reshape(grid.shape)),
                            {"convention": "unit mass on the cell", "target": 1.0}, 1.0, 1.0,
                            residuals=info)


def centering_defect(cs, m, side="+"):
    """Quadrature of ``int_Y b_tilde m`` for one periodic side.

    Parameters
    ----------
    cs : CoefficientSet or PeriodicSide
    m : InvariantMeasure or Field

    Returns
    -------
    ndarray of shape (d,)
    """
    mf = m.m if isinstance(m, InvariantMeasure) else m
    s = _side_of(cs, side)
    _, bt = sample_side(s, mf.grid)
    return np.array([integrate((mf.grid, bt[i] * mf.values)) for i in range(mf.grid.d)])


def check_centering(cs, m, side="+", tol=1e-8):
    """Raise CenteringDefect when any component of the defect exceeds ``tol``."""
    defect = centering_defect(cs, m, side)
    if np.abs(defect).max() > tol:
        raise CenteringDefect("centring defect %s exceeds %.1e on side %s"
                              % (np.array2string(defect, precision=4), tol, side), defect)
    return defect


def _anchor_window(L):
    return (L - 0.5, -L - 0.5)


def solve_cylinder_measure(cs, grid, scale=1.0, periodic=None, anchor_tol=1e-4, tol=1e-10,
                           noise_floor=1e-13, fit_tail=True):
    """Invariant measure of the interface generator on a cylinder grid.

    Parameters
    ----------
    cs : CoefficientSet
    grid : CylinderGrid
        'reflecting' or 'double-interface-torus' topology.
    scale : float
        Final normalisation ``q_plus + q_minus = 2 * scale``.
    periodic : tuple of InvariantMeasure, optional
        ``(m_minus, m_plus)`` on the torus of ``grid.n_cell`` nodes; solved
        here when omitted.
    anchor_tol : float
        Allowed ``int |m - q m_pm|`` over an anchor cell, relative to ``q``.
    noise_floor : float
        Cell deviations below ``noise_floor * q`` are ignored by the tail fit.

    Returns
    -------
    InvariantMeasure

    Raises
    ------
    PlateauNotReached
        When an anchor cell still feels an interface; raise L.
    """
    if not isinstance(grid, CylinderGrid) or grid.topology == "truncated-dirichlet":
        raise GridError("cylinder measures need the 'reflecting' or 'double-interface-torus' grid")
    if scale <= 0:
        raise ConfigError("scale must be positive")
    at, bt = sample_interface(cs, grid)
    G = nondivergence_matrix(grid, at, bt)
    vol = 4.0 * grid.L
    m, info = solve_singular_adjoint(G, np.full(grid.n_nodes, grid.h ** grid.d / vol), 1.0, tol)
    m = m.reshape(grid.shape)

    if periodic is None:
        cell = TorusGrid(grid.d, grid.n_cell)
        periodic = (solve_periodic_measure(cs, cell, "-", tol),
                    solve_periodic_measure(cs, cell, "+", tol))
    mm, mp = periodic
    tm, tp = tile_axial(mm.m.values, grid), tile_axial(mp.m.values, grid)

    wp, wm = _anchor_window(grid.L)
    q = {}
    for key, w, tile in (("+", wp, tp), ("-", wm, tm)):
        qv = integrate((grid, m), window=w) / integrate((grid, tile), window=w)
        dev = integrate((grid, np.abs(m - qv * tile)), window=w)
        info["anchor_deviation_" + ("plus" if key == "+" else "minus")] = dev / qv
        if dev > anchor_tol * qv:
            raise PlateauNotReached(
                "anchor cell at y1 = %s%d deviates by %.2e (relative) > %.1e; increase L"
                % (key, grid.L, dev / qv, anchor_tol))
        q[key] = qv

    c = 2.0 * scale / (q["+"] + q["-"])
    m = c * m
    qp, qm = c * q["+"], c * q["-"]
    norm = {"convention": "q_plus + q_minus = 2 * scale", "target": float(scale),
            "anchors": [-grid.L, grid.L], "topology": grid.topology}
    meas = InvariantMeasure(Field(grid, m), norm, float(qp), float(qm), None, info, mp, mm)
    if fit_tail:
        meas.tail = tail_decay_report(meas, noise_floor=noise_floor, strict=False)
    return meas


def cell_deviations(meas):
    """``d_j = int_{C_j} |m - q m_pm|`` for the cells [j, j+1) and [-j-1, -j), j < L."""
    grid = meas.grid
    m = meas.m.values
    tp = tile_axial(meas.m_plus.m.values, grid)
    tm = tile_axial(meas.m_minus.m.values, grid)
    j = np.arange(grid.L)
    dp = np.array([integrate((grid, np.abs(m - meas.q_plus * tp)), window=k) for k in j])
    dm = np.array([integrate((grid, np.abs(m - meas.q_minus * tm)), window=-k - 1) for k in j])
    return j, dp, dm


def _fit(j, dev, floor, min_cells=4):
    # keep the leading run of cells that sit above the floor and still decay
    n = 0
    while n < len(dev) and dev[n] > floor and (n == 0 or dev[n] < 0.5 * dev[n - 1]):
        n += 1
    if n < min_cells:
        return None
    jj, y = j[:n], np.log(dev[:n])
    slope, icpt = np.polyfit(jj, y, 1)
    rms = float(np.sqrt(np.mean((y - (slope * jj + icpt)) ** 2)))
    return {"rate": float(-slope), "log_C": float(icpt), "fit_rms": rms, "cells": jj.tolist()}


def tail_decay_report(meas, noise_floor=1e-13, first_cell=1, strict=True, min_cells=4):
    """Exponential fit ``d_j ~ C exp(-c j)`` of the per-cell deviations.

    Parameters
    ----------
    meas : InvariantMeasure
        Cylinder measure with its periodic one-sided measures.
    noise_floor : float
        Relative to the plateau constants.  The floor actually used is the
        larger of this and ten times the smallest sampled deviation, which
        estimates the round-off level once the tail has died out.
    first_cell : int
        Cells inside the ramp are excluded from the fit.
    strict : bool
        Raise FitUnstable instead of flagging a degenerate fit.

    Returns
    -------
    dict
        ``rate`` (smaller of the two sides), ``rate_plus``, ``rate_minus``,
        ``fit_rms``, ``degenerate`` and the raw deviations.
    """
    j, dp, dm = cell_deviations(meas)
    fp = _fit(j[first_cell:], dp[first_cell:],
              max(noise_floor * meas.q_plus, 10 * dp.min()), min_cells)
    fm = _fit(j[first_cell:], dm[first_cell:],
              max(noise_floor * meas.q_minus, 10 * dm.min()), min_cells)
    degenerate = fp is None or fm is None
    if degenerate and strict:
        raise FitUnstable("fewer than %d cells above the noise floor on side %s"
                          % (min_cells, "+" if fp is None else "-"))
    rates = [f["rate"] for f in (fp, fm) if f is not None]
    return {"rate": min(rates) if rates else None,
            "rate_plus": fp["rate"] if fp else None,
            "rate_minus": fm["rate"] if fm else None,
            "fit_rms": max([f["fit_rms"] for f in (fp, fm) if f is not None], default=None),
            "degenerate": degenerate,
            "fit_plus": fp, "fit_minus": fm,
            "deviations_plus": dp.tolist(), "deviations_minus": dm.tolist()}
