"""Independent oracles for derived reference values.

Nothing here imports the package: each oracle rebuilds its quantity from
scratch with dense numpy linear algebra or scipy quadrature.  ``FROZEN``
holds the values they produced; ``test_oracles.py`` re-runs the oracles and
checks them against the frozen numbers before the package is compared
against either.

Regenerate with ``python tests/oracles.py``.
"""

import json

import numpy as np
from scipy import integrate

FROZEN = {
    "laminate_harmonic": 0.8660254037844387,
    "laminate_arithmetic": 1.0,
    "laminate_discrete_n32": [0.8678167034825, 0.9995689216777],
    "laminate_discrete_n64": [0.8664759387683, 0.9998923523372],
    "laminate_current_n32": 0.0,
    "matched_ratio": 2.0,
    "laplace_G_exponent": -1.0,
    "laplace_grad_exponent": -2.0,
}


def laminate_continuum(amplitude=0.5):
    """Harmonic and arithmetic means of ``1 + amplitude sin(2 pi y)`` by quadrature."""
    a = lambda y: 1.0 + amplitude * np.sin(2 * np.pi * y)
    inv, _ = integrate.quad(lambda y: 1.0 / a(y), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    mean, _ = integrate.quad(a, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    return 1.0 / inv, mean


def laminate_discrete(n, amplitude=0.5):
    """Discrete laminate tensor from a dense one-dimensional chain.

    The generator ``a u'' + a' u'`` (drift chosen so that the continuum
    invariant measure is 1) is discretised with central differences on ``n``
    periodic nodes.  Its adjoint kernel gives ``m``; the divergence-form
    coefficient ``a m`` averaged onto the faces then has the harmonic mean as
    axial tensor entry, while the tangential entry is the plain mean.

    Returns
    -------
    (A11, A22, current)
        ``current`` is the constant face flux of the measure, zero for a
        drift that is odd about a quarter period.
    """
    h = 1.0 / n
    y = np.arange(n) * h
    a = 1.0 + amplitude * np.sin(2 * np.pi * y)
    b = 2 * np.pi * amplitude * np.cos(2 * np.pi * y)
    G = np.zeros((n, n))
    for j in range(n):
        G[j, (j + 1) % n] += a[j] / h ** 2 + b[j] / (2 * h)
        G[j, (j - 1) % n] += a[j] / h ** 2 - b[j] / (2 * h)
        G[j, j] += -2 * a[j] / h ** 2
    # kernel of G^T with unit mean
    B = np.vstack([G.T, np.full(n, h)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    m = np.linalg.lstsq(B, rhs, rcond=None)[0]
    am = a * m
    face = 0.5 * (am + np.roll(am, -1))
    flux = 0.5 * (b * m + np.roll(b * m, -1)) - (np.roll(am, -1) - am) / h
    A11 = 1.0 / np.mean(1.0 / face)
    A22 = float(np.mean(am))
    return float(A11), A22, float(np.abs(flux).max())


def stream_flux(P, h):
    """Face flux ``(D-_2 P, -D-_1 P)`` of a periodic stream function on a square torus."""
    B1 = (P - np.roll(P, 1, axis=1)) / h
    B2 = -(P - np.roll(P, 1, axis=0)) / h
    return np.stack([B1, B2])


def compute_frozen():
    harm, arith = laminate_continuum()
    d32 = laminate_discrete(32)
    d64 = laminate_discrete(64)
    return {
        "laminate_harmonic": harm,
        "laminate_arithmetic": arith,
        "laminate_discrete_n32": [round(d32[0], 13), round(d32[1], 13)],
        "laminate_discrete_n64": [round(d64[0], 13), round(d64[1], 13)],
        "laminate_current_n32": round(d32[2], 12),
        "matched_ratio": 2.0,
        "laplace_G_exponent": -1.0,
        "laplace_grad_exponent": -2.0,
    }


if __name__ == "__main__":
    print(json.dumps(compute_frozen(), indent=2))
