"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds are the stated ones.  Where a criterion is evaluated through a
surrogate quantity the line says which (see the decisions ledger).
"""

import time

import numpy as np
import pytest

from oracles import FROZEN

from homoglab.coeff import build_family
from homoglab.corrector import bracket_limit, one_sided_matrix
from homoglab.harness import (ExperimentSpec, cell_tensors, green_probe, h_minus_one_source_check,
                              prepare_interface, rate_study, solve_eps_problem, solve_homogenized)
from homoglab.measure import solve_cylinder_measure, solve_periodic_measure
from homoglab.mesh import CylinderGrid, Field, TorusGrid

pytestmark = pytest.mark.slow

EPS = [1 / 8, 1 / 16, 1 / 32, 1 / 64]


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.abs(a - b).max() / np.abs(b).max())


@pytest.fixture(scope="module")
def interface32():
    cs = build_family({"name": "interface", "d": 2})
    return {L: prepare_interface(cs, L, 32) for L in (6, 8)}


@pytest.fixture(scope="module")
def interface_rates():
    spec = ExperimentSpec(family={"name": "interface", "d": 2}, eps_list=EPS, refine=16)
    t = time.time()
    rep = rate_study(spec)
    return rep, time.time() - t


# ---------------------------------------------------------------- 1

def test_identity_sanity(verdict):
    t = time.time()
    cs = build_family({"name": "identity", "d": 2})
    cell = cell_tensors(cs, 16)
    D = prepare_interface(cs, 6, 8)
    tn = D.tensors
    checks = {
        "m": float(np.abs(D.m_t - 1.0).max()),
        "q": abs(tn.q_plus - tn.q_minus),
        "A_hat": max(rel(tn.A_hat_plus, np.eye(2)), rel(tn.A_hat_minus, np.eye(2)),
                     rel(cell["plus"]["A_hat"], np.eye(2))),
        "chi": max(D.chi_int.sup_norm(), D.chi_plus.sup_norm(), D.chi_minus.sup_norm()),
        "theta": float(np.abs(tn.theta).max()),
        "residuals": max(D.phi_b.residual, D.phi_int.residual,
                         max(D.chi_int.residuals[k] for k in D.chi_int.residuals
                             if k.startswith("equation"))),
    }
    worst = max(checks, key=checks.get)
    verdict(1, "identity sanity", checks[worst] <= 1e-8,
            "max deviation %.1e (%s), %.1fs" % (checks[worst], worst, time.time() - t))


# ---------------------------------------------------------------- 2

def test_measure_recovery(verdict):
    side = build_family({"name": "gradient", "d": 2}).side("+")
    errs = {}
    for n in (32, 64):
        g = TorusGrid(2, n)
        ms = np.broadcast_to(side.m_star(g.coords()), g.shape)
        m = solve_periodic_measure(side, g).m.values
        errs[n] = float(np.abs(m - ms / ms.mean()).max() / ms.max())
    order = np.log2(errs[32] / errs[64])
    verdict(2, "measure recovery", errs[64] <= 1e-3 and 1.7 <= order <= 2.3,
            "rel err %.2e at n=64, order %.2f" % (errs[64], order))


# ---------------------------------------------------------------- 3

def test_laminate_tensor(verdict):
    A = np.array(cell_tensors(build_family({"name": "laminate", "d": 2}), 128)["plus"]["A_hat"])
    ref = np.diag([FROZEN["laminate_harmonic"], FROZEN["laminate_arithmetic"]])
    gap = float(np.abs(A - ref).max() / np.abs(ref).max())
    verdict(3, "laminate effective tensor", gap <= 1e-3, "rel gap %.2e at n=128" % gap)


# ---------------------------------------------------------------- 4

def test_one_sided_window_matches_periodic(interface32, verdict):
    D = interface32[8]
    A_gt = one_sided_matrix(Field(D.tgrid, D.A_cyl), Field(D.cell, D.A_inf_plus), "+")
    N = D.tgrid.L - 3
    b = bracket_limit(A_gt, D.chi_gt, N)
    W = D.tensors.weighted_plus
    raw, ext = rel(b["raw"], W), rel(b["extrapolated"], W)
    verdict(4, "one-sided window = periodic", raw <= 1e-3,
            "raw window N=%d: %.2e, 1/N-extrapolated %.1e" % (N, raw, ext))


# ---------------------------------------------------------------- 5

def test_route_equivalence(verdict):
    rep = cell_tensors(build_family({"name": "interface", "d": 2}), 64)
    sym, full = [], []
    for s in ("plus", "minus"):
        Ad, An = np.array(rep[s]["A_hat"]), np.array(rep[s]["A_hat_nondiv"])
        sym.append(rel(0.5 * (An + An.T), 0.5 * (Ad + Ad.T)))
        full.append(rel(An, Ad))
    verdict(5, "route equivalence", max(full) <= 1e-3,
            "full tensors %.1e / %.1e, symmetric parts %.1e / %.1e (n=64)"
            % (full[0], full[1], sym[0], sym[1]))


# ---------------------------------------------------------------- 6

def test_flux_corrector_identities(interface32, verdict):
    D6, D8 = interface32[6], interface32[8]
    fcs = [D8.phi_plus, D8.phi_minus, D8.phi_b, D8.phi_int]
    anti = max(f.antisymmetry_defect() for f in fcs)
    res = max(f.residual for f in fcs)
    drift = {k: abs(getattr(D8, k).sup / getattr(D6, k).sup - 1.0) for k in ("phi_b", "phi_int")}
    ok = anti == 0.0 and res <= 1e-6 and max(drift.values()) <= 0.02
    verdict(6, "flux corrector identities", ok,
            "antisymmetry %.0e, residual %.1e, sup drift L6->8 %.1e / %.1e"
            % (anti, res, drift["phi_b"], drift["phi_int"]))


# ---------------------------------------------------------------- 7

def test_interface_corrector_decay(interface32, verdict):
    D6, D8 = interface32[6], interface32[8]
    tails = D8.chi_int.tail.values()
    rates = [r for t in tails for r in (t["rate_right"], t["rate_left"]) if r is not None]
    share = max(t["end_share"] for t in tails if not t["negligible"])
    drift = abs(D8.chi_int.sup_norm() / D6.chi_int.sup_norm() - 1.0)
    ok = bool(rates) and min(rates) > 0 and share <= 1e-8 and drift <= 0.01
    verdict(7, "interface corrector decay", ok,
            "min rate %.2f per cell, end share %.1e, sup drift %.1e"
            % (min(rates), share, drift))


# ---------------------------------------------------------------- 8

def test_plateau_extraction(verdict):
    cs = build_family({"name": "matched", "d": 2})
    fits = {}
    for L in (6, 8):
        fits[L] = solve_cylinder_measure(cs, CylinderGrid(2, L, 32, "reflecting"))
    m8 = fits[8]
    ratio = m8.q_plus / m8.q_minus
    spread = max(abs(fits[8].tail[k] / fits[6].tail[k] - 1.0) for k in ("rate_plus", "rate_minus"))
    ok = abs(ratio / 2.0 - 1.0) <= 2e-3 and m8.tail["rate"] > 0 and spread <= 0.2
    verdict(8, "plateau constants", ok,
            "q+/q- = %.5f, rates %.2f/%.2f, spread across L %.1e"
            % (ratio, m8.tail["rate_plus"], m8.tail["rate_minus"], spread))


# ---------------------------------------------------------------- 9, 10

def test_rate_interface_and_laminate_control(interface_rates, verdict):
    rep, secs = interface_rates
    s = rep.slopes
    g, i = s["l2_err"]["slope"], s["interior_l2_err"]["slope"]
    spec = ExperimentSpec(family={"name": "laminate", "d": 2}, eps_list=EPS, refine=16,
                          richardson=False)
    t = time.time()
    lam = rate_study(spec).slopes["l2_err"]["slope"]
    secs += time.time() - t
    ok = 0.8 <= g <= 1.3 and i >= g - 0.1 and abs(lam - 1.0) <= 0.2
    verdict(9, "O(eps) rate, d=2", ok,
            "global %.3f, interior %.3f, laminate control %.3f, Richardson ratio %.2f, %.0fs"
            % (g, i, lam, rep.richardson.get("ratio", float("nan")), secs))


def test_corrector_augmented_rate(interface_rates, verdict):
    rep, _ = interface_rates
    s = rep.slopes["h1_w_err"]
    verdict(10, "corrector-augmented rate", s["slope"] >= 0.7,
            "interior grad w slope %.3f +- %.3f" % (s["slope"], s["band"]))


# ---------------------------------------------------------------- 11

def test_scaling_invariance(verdict):
    cs = build_family({"name": "interface", "d": 2})
    D1 = prepare_interface(cs, 8, 16, full=False)
    D7 = prepare_interface(cs, 8, 16, scale=7.0, full=False)
    q = (D7.tensors.q_plus / D1.tensors.q_plus, D7.tensors.q_minus / D1.tensors.q_minus)
    _, u1, _ = solve_eps_problem(D1, 1 / 8, tol=1e-12)
    _, u7, _ = solve_eps_problem(D7, 1 / 8, tol=1e-12)
    _, v1, _ = solve_homogenized(D1.tensors, 1 / 128, 2, tol=1e-12)
    _, v7, _ = solve_homogenized(D7.tensors, 1 / 128, 2, tol=1e-12)
    du, dv = rel(u7, u1), rel(v7, v1)
    ok = max(abs(x / 7.0 - 1.0) for x in q) <= 1e-8 and du <= 1e-8 and dv <= 1e-8
    verdict(11, "scaling invariance", ok,
            "q ratios %.10f/%.10f, u_eps %.1e, u_0 %.1e" % (q[0], q[1], du, dv))


# ---------------------------------------------------------------- 12

def test_h_minus_one_source(verdict):
    D = prepare_interface(build_family({"name": "matched", "d": 2}), 8, 8)
    out = h_minus_one_source_check(D, EPS, refine=8)
    r = out["ratios"]
    verdict(12, "H^-1 source convergence", len(r) == 3 and max(r) <= 0.75,
            "per-halving ratios " + ", ".join("%.3f" % x for x in r))


# ---------------------------------------------------------------- 13

def test_green_decay(verdict):
    t = time.time()
    lap = green_probe(laplace=True)
    D = prepare_interface(build_family({"name": "interface", "d": 3}), 8, 8, full=False)
    g = green_probe(D)
    ok = (-2.5 <= g["grad_exponent"] <= -1.6 and -1.3 <= g["G_exponent"] <= -0.7
          and abs(lap["G_exponent"] + 1.0) <= 0.15)
    verdict(13, "Green decay, d=3", ok,
            "|grad G| %.2f, |G| %.2f, Laplace |G| %.2f, symmetry %.0e, %.0fs"
            % (g["grad_exponent"], g["G_exponent"], lap["G_exponent"], g["symmetry_gap"],
               time.time() - t))
