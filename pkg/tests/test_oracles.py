"""Oracles reproduce their frozen values, then the package is compared to them."""

import numpy as np
import pytest

from oracles import FROZEN, compute_frozen, laminate_discrete, stream_flux

from homoglab.coeff import build_family
from homoglab.harness import cell_tensors
from homoglab.interface import build_flux_corrector_periodic
from homoglab.mesh import TorusGrid, divergence


def test_oracles_reproduce_frozen_values():
    fresh = compute_frozen()
    for key, val in FROZEN.items():
        np.testing.assert_allclose(fresh[key], val, rtol=0, atol=1e-12, err_msg=key)


def test_laminate_harmonic_mean_closed_form():
    # harmonic mean of 1 + a sin is sqrt(1 - a^2)
    assert FROZEN["laminate_harmonic"] == pytest.approx(np.sqrt(0.75), abs=1e-14)


def test_discrete_laminate_converges_to_continuum():
    e32 = abs(FROZEN["laminate_discrete_n32"][0] - FROZEN["laminate_harmonic"])
    e64 = abs(FROZEN["laminate_discrete_n64"][0] - FROZEN["laminate_harmonic"])
    assert 3.5 < e32 / e64 < 4.5


@pytest.mark.parametrize("n", [32, 64])
def test_package_laminate_matches_discrete_oracle(n):
    rep = cell_tensors(build_family({"name": "laminate", "d": 2}), n)
    A = np.array(rep["plus"]["A_hat"])
    ref = FROZEN["laminate_discrete_n%d" % n]
    np.testing.assert_allclose([A[0, 0], A[1, 1]], ref, rtol=1e-9)
    assert abs(A[0, 1]) < 1e-12 and abs(A[1, 0]) < 1e-12


def test_oracle_laminate_carries_no_current():
    assert abs(laminate_discrete(32)[2]) < 1e-10


def test_package_flux_corrector_reproduces_stream_flux():
    n = 16
    g = TorusGrid(2, n)
    rng = np.random.default_rng(3)
    P = rng.standard_normal((n, n))
    B = stream_flux(P, g.h)
    assert np.abs(divergence(g, B)).max() < 1e-10
    fc = build_flux_corrector_periodic(B[:, None], g)
    assert fc.residual < 1e-9
    assert fc.antisymmetry_defect() == 0.0
