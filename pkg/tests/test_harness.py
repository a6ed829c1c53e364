import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab.coeff import build_family
from homoglab.errors import ConfigError, PlateauNotReached
from homoglab.harness import (ConvergenceReport, ExperimentSpec, fit_slope, prepare_interface,
                              restrict, smooth_S_eps, solve_eps_problem, solve_homogenized)
from homoglab.mesh import BoxGrid


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(1e-3, 1e3))
def test_fit_slope_of_exact_power_law(p, c):
    eps = np.array([1 / 8, 1 / 16, 1 / 32, 1 / 64])
    fit = fit_slope(eps, c * eps ** p)
    assert fit["slope"] == pytest.approx(p, abs=1e-9)
    assert fit["band"] < 1e-6


def test_fit_slope_degenerate_cases():
    assert fit_slope([0.1], [1.0])["degenerate"]
    assert fit_slope([0.1, 0.05], [1.0, 0.0])["degenerate"]
    two = fit_slope([0.1, 0.05], [0.2, 0.1])
    assert two["slope"] == pytest.approx(1.0) and two["band"] is None


def test_experiment_spec_validation():
    ok = ExperimentSpec(family={"name": "matched"}, eps_list=[1 / 8, 1 / 16])
    assert ok.validate() is ok
    for bad in (dict(refine=7), dict(eps_list=[0.3]), dict(eps_list=[]), dict(L=4)):
        kw = dict(family={"name": "matched"}, eps_list=[1 / 8])
        kw.update(bad)
        with pytest.raises(ConfigError):
            ExperimentSpec(**kw).validate()


def test_report_csv_columns():
    rows = [{"epsilon": 0.125, "l2_err": 1.0, "linf_err": 2.0, "h1_w_err": 3.0,
             "interior_l2_err": 4.0}]
    rep = ConvergenceReport({}, rows, {}, {}, {"a": {"pass": True}}, {})
    lines = rep.csv().splitlines()
    assert lines[0] == "epsilon,l2_err,linf_err,h1_w_err,interior_l2_err"
    assert len(lines) == 2
    assert rep.plot_data("l2_err").split() == ["1.250000000000e-01", "1.000000000000e+00"]
    assert rep.passed


def test_mollifier_preserves_interior_constants_and_checks_resolution():
    box = BoxGrid(2, 1 / 64)
    g = np.ones(box.shape)
    s = smooth_S_eps(g, box, 1 / 8)
    inner = np.abs(box.axis_coords(0)) < 0.9
    np.testing.assert_allclose(s[inner], 1.0, atol=1e-12)
    with pytest.raises(ConfigError):
        smooth_S_eps(g, box, 1 / 32)


def test_restrict_takes_common_nodes():
    fine, coarse = BoxGrid(2, 1 / 16), BoxGrid(2, 1 / 8)
    X = fine.coords()
    u = np.broadcast_to(X[0] + 10 * X[1], fine.shape)
    Xc = coarse.coords()
    np.testing.assert_allclose(restrict(u, fine, coarse), np.broadcast_to(Xc[0] + 10 * Xc[1],
                                                                           coarse.shape))
    with pytest.raises(ConfigError):
        restrict(u, fine, BoxGrid(2, 3 / 32))


def test_short_cylinder_is_a_diagnostic_failure():
    with pytest.raises(PlateauNotReached, match="increase L"):
        prepare_interface(build_family({"name": "identity", "d": 2}), 2, 8)


def test_identity_family_eps_problem_equals_homogenised_problem():
    D = prepare_interface(build_family({"name": "identity", "d": 2}), 6, 8, full=False)
    box, u, info = solve_eps_problem(D, 1 / 8, tol=1e-12)
    hb, u0, _ = solve_homogenized(D.tensors, box.h, 2, tol=1e-12)
    assert np.abs(u - u0).max() < 1e-9 * np.abs(u0).max()
    assert info["nodes"] == box.n_nodes


def test_drift_and_antisymmetric_forms_agree_to_discretisation_error():
    D = prepare_interface(build_family({"name": "matched", "d": 2}), 6, 8, full=False)
    _, ua, _ = solve_eps_problem(D, 1 / 8, tol=1e-12)
    _, ud, _ = solve_eps_problem(D, 1 / 8, tol=1e-12, form="drift")
    assert np.abs(ua - ud).max() < 5e-3 * np.abs(ua).max()
