import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab.coeff import (MatrixTrig, Ramp, TrigPoly, build_family, divergence_fields,
                            family_gradient_drift, sample_side)
from homoglab.errors import ConfigError, DiagnosticError
from homoglab.measure import solve_periodic_measure
from homoglab.mesh import TorusGrid, nondivergence_matrix

amp = st.floats(-0.4, 0.4, allow_nan=False)
wave = st.tuples(st.integers(-2, 2), st.integers(-2, 2))


@settings(max_examples=30, deadline=None)
@given(amp, amp, wave, wave, st.floats(0, 1), st.floats(0, 1))
def test_trig_gradient_matches_finite_difference(a, b, k1, k2, y1, y2):
    p = TrigPoly(1.0, cos=[(a, k1)], sin=[(b, k2)])
    Y = [np.array(y1), np.array(y2)]
    g = p.grad(Y)
    h = 1e-6
    for i in range(2):
        Yp = list(Y)
        Ym = list(Y)
        Yp[i] = Yp[i] + h
        Ym[i] = Ym[i] - h
        fd = (p(Yp) - p(Ym)) / (2 * h)
        assert float(g[i]) == pytest.approx(float(fd), abs=1e-5)


@settings(max_examples=20, deadline=None)
@given(amp, wave)
def test_trig_polynomial_is_periodic(a, k):
    p = TrigPoly(0.5, cos=[(a, k)], sin=[(a, k)])
    Y = [np.linspace(0, 1, 7), np.linspace(0, 1, 7) ** 2]
    Ys = [Y[0] + 1.0, Y[1] - 2.0]
    np.testing.assert_allclose(p(Y), p(Ys), atol=1e-12)


def test_trig_config_round_trip():
    p = TrigPoly(1.0, cos=[(0.2, (1, 0))], sin=[(0.1, (0, 1))])
    q = TrigPoly.from_config(p.to_config())
    Y = [np.array([0.1, 0.7]), np.array([0.3, 0.9])]
    np.testing.assert_allclose(p(Y), q(Y))
    with pytest.raises(ConfigError):
        TrigPoly.from_config({"bogus": 1})


def test_ramp_is_a_smooth_step():
    r = Ramp(2.0)
    y = np.array([-5.0, -1.0, 0.0, 1.0, 5.0])
    v = r.value(y)
    assert v[0] == 0.0 and v[-1] == 1.0
    assert v[2] == pytest.approx(0.5)
    assert np.all(np.diff(v) >= 0)


@pytest.mark.parametrize("name", ["identity", "laminate", "gradient", "divfree", "interface",
                                  "matched", "fictitious"])
@pytest.mark.parametrize("d", [2, 3])
def test_families_build(name, d):
    cs = build_family({"name": name, "d": d})
    assert cs.d == d
    assert 0 < cs.lam <= cs.Lam
    assert cs.describe()["family"]


def test_family_validation():
    with pytest.raises(ConfigError):
        build_family({"name": "nope"})
    with pytest.raises(ConfigError):
        build_family({"name": "identity", "d": 4})
    with pytest.raises(ConfigError):
        family_gradient_drift(MatrixTrig.identity(2), TrigPoly(2.0))
    with pytest.raises(DiagnosticError):
        family_gradient_drift(MatrixTrig.identity(2), TrigPoly(1.0, cos=[(1.5, (1, 0))]))


def test_indefinite_matrix_is_rejected():
    a = MatrixTrig(2, {(0, 0): TrigPoly(1.0), (1, 1): TrigPoly(-0.5)})
    with pytest.raises(ConfigError):
        family_gradient_drift(a, TrigPoly(1.0))


@pytest.mark.parametrize("name", ["gradient", "divfree"])
def test_face_drift_is_divergence_free_for_the_discrete_measure(name):
    cs = build_family({"name": name, "d": 2})
    g = TorusGrid(2, 16)
    meas = solve_periodic_measure(cs, g, "+")
    at, bt = sample_side(cs.side("+"), g)
    ds = divergence_fields(g, at, bt, meas.m.values)
    G = nondivergence_matrix(g, at, bt)
    # the placement of b makes sum_i D-_i b_i = -G^T m exactly
    np.testing.assert_allclose(ds.divergence_of_b().ravel(), -(G.T @ meas.m.values.ravel()),
                               atol=1e-9 * np.abs(ds.a).max() / g.h ** 2)
    assert np.abs(ds.divergence_of_b()).max() < 1e-8 * np.abs(ds.a).max() / g.h ** 2
