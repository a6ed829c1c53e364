"""Coefficient families, interface blending and the divergence-form fields.

All coefficients are closed-form trigonometric evaluators.  An evaluator is
called with a tuple ``Y`` of broadcastable coordinate arrays (as returned by
``Grid.coords``) and scalar evaluators also expose ``grad(Y)``.

Cylinder layouts
----------------
Interface quantities depend on how the cylinder is realised.  ``layout=None``
means the line R x T^{d-1} with a single ramp at y1 = 0.  A number ``L`` means
the double-interface torus of axial period 4L whose ramp rises at 0 and falls
back at the wrap point +-2L.
"""

import numpy as np

from .errors import ConfigError, DiagnosticError, GridError
from .mesh import CylinderGrid, TorusGrid, avg_plus, dcen, dplus

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------- evaluators

def _kvec(k, d):
    k = tuple(int(v) for v in k)
    if len(k) > d:
        if any(k[d:]):
            raise ConfigError("wave vector %s does not fit dimension %d" % (k, d))
        k = k[:d]
    return k + (0,) * (d - len(k))


class TrigPoly:
    """Real trigonometric polynomial on the unit torus.

    ``f(y) = const + sum a cos(2 pi k.y) + sum b sin(2 pi k.y)``

    Parameters
    ----------
    const : float
    cos, sin : sequence of (amplitude, wave vector)
    """

    def __init__(self, const=0.0, cos=(), sin=()):
        self.const = float(const)
        self.cos = [(float(a), tuple(int(v) for v in k)) for a, k in cos]
        self.sin = [(float(a), tuple(int(v) for v in k)) for a, k in sin]

    @classmethod
    def from_config(cls, cfg):
        if isinstance(cfg, TrigPoly):
            return cfg
        if isinstance(cfg, (int, float)):
            return cls(cfg)
        if not isinstance(cfg, dict):
            raise ConfigError("trig polynomial must be a number or a mapping, got %r" % (cfg,))
        unknown = set(cfg) - {"const", "cos", "sin"}
        if unknown:
            raise ConfigError("unknown trig polynomial keys %s" % sorted(unknown))
        try:
            return cls(cfg.get("const", 0.0), cfg.get("cos", ()), cfg.get("sin", ()))
        except (TypeError, ValueError) as exc:
            raise ConfigError("bad trig polynomial %r: %s" % (cfg, exc))

    def to_config(self):
        return {"const": self.const, "cos": [[a, list(k)] for a, k in self.cos],
                "sin": [[a, list(k)] for a, k in self.sin]}

    def scaled(self, c):
        return TrigPoly(c * self.const, [(c * a, k) for a, k in self.cos],
                        [(c * a, k) for a, k in self.sin])

    @property
    def is_constant(self):
        return not any(a for a, _ in self.cos + self.sin)

    def _phase(self, Y, k):
        k = _kvec(k, len(Y))
        return TWO_PI * sum(ki * y for ki, y in zip(k, Y) if ki)

    def __call__(self, Y):
        out = self.const
        for a, k in self.cos:
            out = out + a * np.cos(self._phase(Y, k))
        for a, k in self.sin:
            out = out + a * np.sin(self._phase(Y, k))
        return out

    def grad(self, Y):
        d = len(Y)
        g = [0.0] * d
        for a, k in self.cos:
            kk, s = _kvec(k, d), np.sin(self._phase(Y, k))
            for i in range(d):
                if kk[i]:
                    g[i] = g[i] - a * TWO_PI * kk[i] * s
        for a, k in self.sin:
            kk, c = _kvec(k, d), np.cos(self._phase(Y, k))
            for i in range(d):
                if kk[i]:
                    g[i] = g[i] + a * TWO_PI * kk[i] * c
        return g


class MatrixTrig:
    """Symmetric matrix of trigonometric polynomials.

    Parameters
    ----------
    d : int
    entries : dict
        Keys ``(i, j)`` with ``i <= j`` (zero-based); missing entries are 0.
    """

    def __init__(self, d, entries):
        self.d = d
        self.entries = {}
        for (i, j), p in entries.items():
            i, j = min(i, j), max(i, j)
            if not (0 <= i < d and 0 <= j < d):
                raise ConfigError("matrix entry (%d, %d) outside dimension %d" % (i, j, d))
            self.entries[(i, j)] = TrigPoly.from_config(p)

    @classmethod
    def identity(cls, d, scale=1.0):
        return cls(d, {(i, i): TrigPoly(scale) for i in range(d)})

    @classmethod
    def from_config(cls, d, cfg):
        """``cfg`` maps one-based index strings such as '11' or '12' to polynomials."""
        if isinstance(cfg, MatrixTrig):
            return cfg
        if not isinstance(cfg, dict):
            raise ConfigError("a_tilde must be a mapping of entries")
        entries = {}
        for key, val in cfg.items():
            s = str(key)
            if len(s) != 2 or not s.isdigit():
                raise ConfigError("matrix key %r must look like '12'" % (key,))
            entries[(int(s[0]) - 1, int(s[1]) - 1)] = val
        return cls(d, entries)

    def to_config(self):
        return {"%d%d" % (i + 1, j + 1): p.to_config() for (i, j), p in sorted(self.entries.items())}

    def _entry(self, i, j):
        return self.entries.get((min(i, j), max(i, j)))

    def __call__(self, Y):
        shape = np.broadcast_shapes(*[np.shape(y) for y in Y])
        out = np.zeros((self.d, self.d) + shape)
        for (i, j), p in self.entries.items():
            out[i, j] = p(Y)
            out[j, i] = out[i, j]
        return out

    def column_divergence(self, Y, m):
        """``sum_j d_j(a_ij m)`` for a scalar evaluator m, shape (d, ...)."""
        mv, mg = m(Y), m.grad(Y)
        out = []
        for i in range(self.d):
            acc = 0.0
            for j in range(self.d):
                p = self._entry(i, j)
                if p is None:
                    continue
                acc = acc + p.grad(Y)[j] * mv + p(Y) * mg[j]
            out.append(acc)
        return out


class Ramp:
    """Quintic smoothstep connection from 0 (y1 <= -w/2) to 1 (y1 >= w/2)."""

    def __init__(self, width=2.0):
        if width <= 0:
            raise ConfigError("ramp width must be positive")
        self.width = float(width)

    @staticmethod
    def smoothstep(t):
        t = np.clip(t, 0.0, 1.0)
        return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)

    @staticmethod
    def smoothstep_deriv(t):
        inside = (t > 0.0) & (t < 1.0)
        t = np.clip(t, 0.0, 1.0)
        return np.where(inside, 30.0 * t ** 2 * (1.0 - t) ** 2, 0.0)

    def line(self, y1):
        return self.smoothstep(y1 / self.width + 0.5)

    def line_deriv(self, y1):
        return self.smoothstep_deriv(y1 / self.width + 0.5) / self.width

    def value(self, y1, layout=None):
        if layout is None:
            return self.line(y1)
        L = float(layout)
        return 1.0 + self.line(y1) - self.line(y1 - 2 * L) - self.line(y1 + 2 * L)

    def deriv(self, y1, layout=None):
        if layout is None:
            return self.line_deriv(y1)
        L = float(layout)
        return self.line_deriv(y1) - self.line_deriv(y1 - 2 * L) - self.line_deriv(y1 + 2 * L)

    def to_config(self):
        return {"shape": "quintic-smoothstep", "width": self.width}


def cutoff_plus(y1):
    """psi_+: 0 for y1 <= 0, 1 for y1 >= 1, quintic in between."""
    return Ramp.smoothstep(y1)


def cutoff_plus_deriv(y1):
    return Ramp.smoothstep_deriv(y1)


def cutoff_minus(y1):
    return Ramp.smoothstep(-y1)


class Blend:
    """Scalar ``(1 - R) c_minus f_minus + R c_plus f_plus`` with a cylinder ramp R."""

    def __init__(self, f_minus, f_plus, c_minus, c_plus, ramp, layout=None):
        self.f_minus, self.f_plus = f_minus, f_plus
        self.c_minus, self.c_plus = float(c_minus), float(c_plus)
        self.ramp, self.layout = ramp, layout

    def __call__(self, Y):
        R = self.ramp.value(Y[0], self.layout)
        return (1.0 - R) * self.c_minus * self.f_minus(Y) + R * self.c_plus * self.f_plus(Y)

    def grad(self, Y):
        R = self.ramp.value(Y[0], self.layout)
        dR = self.ramp.deriv(Y[0], self.layout)
        gm, gp = self.f_minus.grad(Y), self.f_plus.grad(Y)
        out = [(1.0 - R) * self.c_minus * a + R * self.c_plus * b for a, b in zip(gm, gp)]
        out[0] = out[0] + dR * (self.c_plus * self.f_plus(Y) - self.c_minus * self.f_minus(Y))
        return out


class StreamDrift:
    """Divergence-free field from a stream function (d=2) or vector potential (d=3).

    Parameters
    ----------
    potentials : list of scalar evaluators
        One entry for d=2 (``s = (d2 psi, -d1 psi)``), three for d=3
        (``s = curl W``).
    """

    def __init__(self, d, potentials):
        need = 1 if d == 2 else 3
        if len(potentials) != need:
            raise ConfigError("d=%d needs %d potential(s), got %d" % (d, need, len(potentials)))
        self.d = d
        self.potentials = list(potentials)

    def __call__(self, Y):
        if self.d == 2:
            g = self.potentials[0].grad(Y)
            return [g[1], -g[0]]
        G = [p.grad(Y) for p in self.potentials]
        return [G[2][1] - G[1][2], G[0][2] - G[2][0], G[1][0] - G[0][1]]


class MeasureDrift:
    """Drift ``b_i = (d_j(a_ij m) + s_i) / m`` that makes m invariant.

    The drift is centred by construction: ``int b m = int div(a m) + int s = 0``
    for periodic data and divergence-free ``s`` with zero mean.
    """

    def __init__(self, a_tilde, measure, stream=None):
        self.a_tilde, self.measure, self.stream = a_tilde, measure, stream

    def __call__(self, Y):
        num = self.a_tilde.column_divergence(Y, self.measure)
        if self.stream is not None:
            s = self.stream(Y)
            num = [n + si for n, si in zip(num, s)]
        m = self.measure(Y)
        return [n / m for n in num]


class ConstantDrift:
    """Spatially constant drift (violates centring unless zero)."""

    def __init__(self, vector):
        self.vector = [float(v) for v in vector]

    def __call__(self, Y):
        return list(self.vector)


class BlendedDrift:
    """Interface drift ``(1 - R) b_minus + R b_plus``."""

    def __init__(self, b_minus, b_plus, ramp):
        self.b_minus, self.b_plus, self.ramp = b_minus, b_plus, ramp

    def __call__(self, Y, layout=None):
        R = self.ramp.value(Y[0], layout)
        return [(1.0 - R) * a + R * b for a, b in zip(self.b_minus(Y), self.b_plus(Y))]


class MatchedDrift:
    """Interface drift whose invariant measure is a prescribed blend.

    ``m_t = (1 - R) q_- m_- + R q_+ m_+`` and stream potentials blended the
    same way, so the drift is ``(div(a m_t) + s_t) / m_t`` and equals the
    one-sided drifts wherever R is 0 or 1.
    """

    def __init__(self, a_tilde, m_minus, m_plus, q_minus, q_plus, ramp,
                 psi_minus=None, psi_plus=None):
        self.a_tilde = a_tilde
        self.m_minus, self.m_plus = m_minus, m_plus
        self.q_minus, self.q_plus = float(q_minus), float(q_plus)
        self.ramp = ramp
        self.psi_minus, self.psi_plus = psi_minus, psi_plus

    def measure(self, layout=None):
        return Blend(self.m_minus, self.m_plus, self.q_minus, self.q_plus, self.ramp, layout)

    def stream(self, layout=None):
        if self.psi_plus is None:
            return None
        d = self.a_tilde.d
        pots = [Blend(pm, pp, self.q_minus, self.q_plus, self.ramp, layout)
                for pm, pp in zip(self.psi_minus, self.psi_plus)]
        return StreamDrift(d, pots)

    def __call__(self, Y, layout=None):
        return MeasureDrift(self.a_tilde, self.measure(layout), self.stream(layout))(Y)


# ---------------------------------------------------------------- sets

class PeriodicSide:
    """One periodic side of the interface: ``a_tilde`` and a drift.

    ``m_star`` is the constructed invariant measure when the family knows it.
    """

    def __init__(self, a_tilde, b_tilde, m_star=None):
        self.a_tilde, self.b_tilde, self.m_star = a_tilde, b_tilde, m_star

    @property
    def d(self):
        return self.a_tilde.d


class CoefficientSet:
    """Problem data: shared ``a_tilde``, one-sided drifts and their connection.

    Parameters
    ----------
    d : int
    a_tilde : MatrixTrig
    plus, minus : PeriodicSide
    ramp : Ramp
    interface_drift : callable, optional
        ``(Y, layout) -> list``; defaults to the ramp blend of the two drifts.
    name : str
    params : dict
        Resolved configuration, copied into reports.
    q_target : tuple, optional
        ``(q_minus, q_plus)`` when the family prescribes them.
    """

    def __init__(self, d, a_tilde, plus, minus=None, ramp=None, interface_drift=None,
                 name="custom", params=None, q_target=None, lam=None, Lam=None):
        minus = plus if minus is None else minus
        if plus.a_tilde is not a_tilde or minus.a_tilde is not a_tilde:
            raise ConfigError("both sides must share a_tilde; only the drift may change")
        self.d = d
        self.a_tilde = a_tilde
        self.plus, self.minus = plus, minus
        self.ramp = ramp or Ramp()
        self.interface_drift = interface_drift or BlendedDrift(minus.b_tilde, plus.b_tilde, self.ramp)
        self.name = name
        self.params = dict(params or {})
        self.q_target = q_target
        self.lam, self.Lam = self.ellipticity_bounds()
        if lam is not None and self.lam < lam * (1 - 1e-12):
            raise ConfigError("a_tilde violates the lower ellipticity bound %g" % lam)
        if Lam is not None and self.Lam > Lam * (1 + 1e-12):
            raise ConfigError("a_tilde violates the upper ellipticity bound %g" % Lam)

    def ellipticity_bounds(self, n=24):
        g = TorusGrid(self.d, n)
        A = g.sample(self.a_tilde, rank=2)
        A = np.moveaxis(A.reshape(self.d, self.d, -1), -1, 0)
        if not np.allclose(A, np.swapaxes(A, 1, 2)):
            raise ConfigError("a_tilde is not symmetric")
        ev = np.linalg.eigvalsh(A)
        if ev.min() <= 0:
            raise ConfigError("a_tilde is not positive definite (min eigenvalue %.3g)" % ev.min())
        return float(ev.min()), float(ev.max())

    def side(self, sign):
        if sign in ("+", 1, "plus"):
            return self.plus
        if sign in ("-", -1, "minus"):
            return self.minus
        raise ValueError("side must be '+' or '-'")

    @property
    def fictitious(self):
        return self.plus is self.minus

    def describe(self):
        return {"family": self.name, "d": self.d, "params": self.params,
                "ramp": self.ramp.to_config(), "lambda": self.lam, "Lambda": self.Lam}


def layout_of(grid):
    """Ramp layout for a cylinder grid (None for the line)."""
    if isinstance(grid, CylinderGrid) and grid.topology == "double-interface-torus":
        return grid.L
    return None


def sample_side(side, grid):
    """``(a_tilde, b_tilde)`` arrays of one periodic side on a torus grid."""
    if not isinstance(grid, TorusGrid):
        raise GridError("periodic sides are sampled on torus grids")
    return grid.sample(side.a_tilde, rank=2), grid.sample(lambda Y: side.b_tilde(Y), rank=1)


def sample_interface(cs, grid):
    """``(a_tilde, b_tilde)`` arrays of the interface problem on a cylinder grid."""
    layout = layout_of(grid)
    return (grid.sample(cs.a_tilde, rank=2),
            grid.sample(lambda Y: cs.interface_drift(Y, layout), rank=1))


# ---------------------------------------------------------------- families

def _positive(m, d, what):
    g = TorusGrid(d, 64)
    mn = float(np.min(g.sample(m)))
    if mn <= 0:
        raise DiagnosticError("%s is not strictly positive (min %.3g)" % (what, mn))
    return mn


def family_identity(d):
    """``a_tilde = I``, no drift."""
    a = MatrixTrig.identity(d)
    side = PeriodicSide(a, ConstantDrift([0.0] * d), TrigPoly(1.0))
    return CoefficientSet(d, a, side, name="identity", params={"d": d})


def family_gradient_drift(a_tilde, m_star, name="gradient_drift"):
    """Drift ``b_i = d_j(a_ij m*) / m*`` so that m* is invariant and centred.

    Raises
    ------
    DiagnosticError
        If m* is not strictly positive.
    ConfigError
        If ``int m* != 1`` (the constant term must be 1).
    """
    d = a_tilde.d
    m_star = TrigPoly.from_config(m_star)
    if abs(m_star.const - 1.0) > 1e-12:
        raise ConfigError("m* must have unit mean (constant term 1)")
    _positive(m_star, d, "m*")
    side = PeriodicSide(a_tilde, MeasureDrift(a_tilde, m_star), m_star)
    return CoefficientSet(d, a_tilde, side, name=name,
                          params={"a_tilde": a_tilde.to_config(), "m_star": m_star.to_config()})


def family_divfree_perturbation(a_tilde, m_star, stream, name="divfree"):
    """Gradient drift plus ``s / m*`` with ``s`` divergence-free.

    Parameters
    ----------
    stream : list of TrigPoly or configs
        Stream function (d=2) or vector potential (d=3).

    Raises
    ------
    DiagnosticError
        If the sampled ``s`` fails a discrete divergence check.
    """
    d = a_tilde.d
    m_star = TrigPoly.from_config(m_star)
    if abs(m_star.const - 1.0) > 1e-12:
        raise ConfigError("m* must have unit mean (constant term 1)")
    _positive(m_star, d, "m*")
    pots = [TrigPoly.from_config(p) for p in stream]
    s = StreamDrift(d, pots)
    g = TorusGrid(d, 32)
    sv = g.sample(s, rank=1)
    div = sum(dcen(sv[i], g, i) for i in range(d))
    # centred differences of an exact curl cancel to round-off
    if np.abs(div).max() > 1e-10 * max(1.0, np.abs(sv).max()):
        raise DiagnosticError("stream drift is not divergence free")
    side = PeriodicSide(a_tilde, MeasureDrift(a_tilde, m_star, s), m_star)
    return CoefficientSet(d, a_tilde, side, name=name,
                          params={"a_tilde": a_tilde.to_config(), "m_star": m_star.to_config(),
                                  "stream": [p.to_config() for p in pots]})


def blend_interface(set_plus, set_minus, ramp=None, name="blend"):
    """Interface set with drift ``(1 - R) b_minus + R b_plus``.

    Raises
    ------
    ConfigError
        If the two sets use different ``a_tilde``.
    """
    if set_plus.a_tilde.to_config() != set_minus.a_tilde.to_config():
        raise ConfigError("blend_interface needs a shared a_tilde")
    a = set_plus.a_tilde
    plus = PeriodicSide(a, set_plus.plus.b_tilde, set_plus.plus.m_star)
    minus = PeriodicSide(a, set_minus.plus.b_tilde, set_minus.plus.m_star)
    ramp = ramp or Ramp()
    return CoefficientSet(set_plus.d, a, plus, minus, ramp, name=name,
                          params={"plus": set_plus.params, "minus": set_minus.params,
                                  "ramp": ramp.to_config()})


def family_matched_measure(a_tilde, m_plus, m_minus, q_plus, q_minus, stream_plus=None,
                           stream_minus=None, ramp=None, name="matched"):
    """Interface family whose cylinder measure is known in closed form.

    The invariant measure is ``(1 - R) q_- m_- + R q_+ m_+``; the plateau
    constants are ``q_+`` and ``q_-``.
    """
    d = a_tilde.d
    m_plus, m_minus = TrigPoly.from_config(m_plus), TrigPoly.from_config(m_minus)
    for m, w in ((m_plus, "m_plus"), (m_minus, "m_minus")):
        if abs(m.const - 1.0) > 1e-12:
            raise ConfigError("%s must have unit mean" % w)
        _positive(m, d, w)
    if q_plus <= 0 or q_minus <= 0:
        raise ConfigError("q_plus and q_minus must be positive")
    ramp = ramp or Ramp()
    pp = pm = None
    sp_ = sm_ = None
    if stream_plus is not None:
        pp = [TrigPoly.from_config(p) for p in stream_plus]
        pm = [TrigPoly.from_config(p) for p in (stream_minus or [0.0] * len(pp))]
        sp_, sm_ = StreamDrift(d, pp), StreamDrift(d, pm)
    plus = PeriodicSide(a_tilde, MeasureDrift(a_tilde, m_plus, sp_), m_plus)
    minus = PeriodicSide(a_tilde, MeasureDrift(a_tilde, m_minus, sm_), m_minus)
    drift = MatchedDrift(a_tilde, m_minus, m_plus, q_minus, q_plus, ramp, pm, pp)
    params = {"a_tilde": a_tilde.to_config(), "m_plus": m_plus.to_config(),
              "m_minus": m_minus.to_config(), "q_plus": float(q_plus), "q_minus": float(q_minus),
              "ramp": ramp.to_config()}
    if pp is not None:
        params["stream_plus"] = [p.to_config() for p in pp]
        params["stream_minus"] = [p.to_config() for p in pm]
    return CoefficientSet(d, a_tilde, plus, minus, ramp, drift, name=name, params=params,
                          q_target=(float(q_minus), float(q_plus)))


def family_laminate(d, amplitude=0.5):
    """``a_tilde = (1 + amplitude sin(2 pi y1)) I`` with the gradient drift of m* = 1.

    Its divergence-form matrix is the classical laminate ``a(y1) I``.
    """
    prof = TrigPoly(1.0, sin=[(amplitude, (1,))])
    a = MatrixTrig(d, {(i, i): prof for i in range(d)})
    cs = family_gradient_drift(a, TrigPoly(1.0), name="laminate")
    cs.params = {"d": d, "amplitude": amplitude}
    return cs


def family_constant_drift(d, vector):
    """``a_tilde = I`` with a constant drift; centring fails unless the drift is 0."""
    a = MatrixTrig.identity(d)
    side = PeriodicSide(a, ConstantDrift(vector))
    return CoefficientSet(d, a, side, name="constant_drift",
                          params={"d": d, "vector": [float(v) for v in vector]})


# Presets used by the command line and the harness.  Each side is invariant
# under (y1, y') -> (1/2 - y1, -y'), which reverses the axial direction; the
# discrete periodic measures then carry exactly zero net axial current.
def default_a_tilde(d):
    if d == 2:
        return MatrixTrig(2, {
            (0, 0): TrigPoly(1.0, cos=[(0.3, (0, 1))]),
            (1, 1): TrigPoly(0.6, sin=[(0.2, (1, 0))]),
            (0, 1): TrigPoly(0.0, sin=[(0.15, (1, 1))]),
        })
    return MatrixTrig(3, {
        (0, 0): TrigPoly(1.0, cos=[(0.3, (0, 1, 0))]),
        (1, 1): TrigPoly(0.7, sin=[(0.2, (1, 0, 0))]),
        (2, 2): TrigPoly(0.8, cos=[(0.2, (0, 0, 1))]),
        (0, 1): TrigPoly(0.0, sin=[(0.1, (1, 1, 0))]),
    })


def default_measures(d):
    if d == 2:
        mp = TrigPoly(1.0, sin=[(0.3, (1, 0))], cos=[(0.2, (0, 1))])
        mm = TrigPoly(1.0, sin=[(-0.25, (1, 0))], cos=[(0.2, (2, 1))])
    else:
        mp = TrigPoly(1.0, sin=[(0.3, (1, 0, 0))], cos=[(0.2, (0, 1, 0))])
        mm = TrigPoly(1.0, sin=[(-0.25, (1, 0, 0))], cos=[(0.2, (2, 0, 1))])
    return mp, mm


def default_streams(d):
    if d == 2:
        return ([TrigPoly(0.0, sin=[(0.05, (1, 1))])],
                [TrigPoly(0.0, cos=[(0.04, (0, 1))])])
    return ([TrigPoly(0.0), TrigPoly(0.0), TrigPoly(0.0, sin=[(0.05, (1, 1, 0))])],
            [TrigPoly(0.0), TrigPoly(0.0), TrigPoly(0.0, cos=[(0.04, (0, 1, 0))])])


def build_family(cfg):
    """Construct a CoefficientSet from a configuration mapping.

    Recognised names: identity, laminate, gradient, divfree, interface
    (generic blend), matched, fictitious, constant_drift.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("family configuration must be a mapping")
    name = cfg.get("name", "matched")
    d = int(cfg.get("d", 2))
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    a_cfg = cfg.get("a_tilde")
    a = MatrixTrig.from_config(d, a_cfg) if a_cfg is not None else default_a_tilde(d)
    mp_def, mm_def = default_measures(d)
    sp_def, sm_def = default_streams(d)
    mp = TrigPoly.from_config(cfg.get("m_plus", mp_def))
    mm = TrigPoly.from_config(cfg.get("m_minus", mm_def))
    ramp = Ramp(float(cfg.get("ramp_width", 2.0)))

    def streams(key, default):
        val = cfg.get(key, default)
        if val is None or val == "none":
            return None
        return [TrigPoly.from_config(p) for p in val]

    if name == "identity":
        return family_identity(d)
    if name == "laminate":
        return family_laminate(d, float(cfg.get("amplitude", 0.5)))
    if name == "constant_drift":
        return family_constant_drift(d, cfg.get("vector", [1.0] + [0.0] * (d - 1)))
    if name in ("gradient", "fictitious"):
        return family_gradient_drift(a, mp, name=name)
    if name == "divfree":
        return family_divfree_perturbation(a, mp, streams("stream_plus", sp_def))
    if name == "interface":
        plus = family_divfree_perturbation(a, mp, streams("stream_plus", sp_def))
        minus = family_divfree_perturbation(a, mm, streams("stream_minus", sm_def))
        cs = blend_interface(plus, minus, ramp, name="interface")
        return cs
    if name == "matched":
        q_plus = float(cfg.get("q_plus", 4.0 / 3.0))
        q_minus = float(cfg.get("q_minus", 2.0 / 3.0))
        sp_ = streams("stream_plus", sp_def)
        sm_ = streams("stream_minus", sm_def) if sp_ is not None else None
        return family_matched_measure(a, mp, mm, q_plus, q_minus, sp_, sm_, ramp)
    raise ConfigError("unknown family %r" % (name,))


# ---------------------------------------------------------------- divergence form

class DivergenceFormSet:
    """``a = a_tilde m``, ``beta = b_tilde m`` and the face drift ``b``.

    ``b[i]`` lives on the face between a node and its +e_i neighbour.  With
    this placement ``sum_i D-_i b_i = -G^T m`` exactly, so b is discretely
    divergence free whenever m is the discrete invariant measure.
    """

    def __init__(self, grid, a, beta, b, m):
        self.grid, self.a, self.beta, self.b, self.m = grid, a, beta, b, m

    def scaled(self, c):
        return DivergenceFormSet(self.grid, c * self.a, c * self.beta, c * self.b, c * self.m)

    def divergence_of_b(self):
        from .mesh import divergence
        return divergence(self.grid, self.b)


def divergence_fields(grid, a_tilde, b_tilde, m):
    """Array version of ``derive_divergence_fields``.

    Parameters
    ----------
    grid : Grid
        Torus or double-interface torus.
    a_tilde, b_tilde, m : ndarray
    """
    m = np.asarray(m, dtype=float)
    if m.min() <= 0:
        raise DiagnosticError("measure must be strictly positive (min %.3g)" % m.min())
    d = grid.d
    a = a_tilde * m
    beta = b_tilde * m
    b = np.empty((d,) + grid.shape)
    for i in range(d):
        bi = avg_plus(beta[i], grid, i) - dplus(a[i, i], grid, i)
        for j in range(d):
            if j != i:
                bi = bi - avg_plus(dcen(a[i, j], grid, j), grid, i)
        b[i] = bi
    return DivergenceFormSet(grid, a, beta, b, m)


def derive_divergence_fields(cs, m, side=None):
    """Divergence-form fields for a measure Field.

    Parameters
    ----------
    cs : CoefficientSet
    m : Field
        Invariant measure on a torus (give ``side``) or double-interface torus.
    side : {'+', '-'}, optional
    """
    grid = m.grid
    if side is not None:
        at, bt = sample_side(cs.side(side), grid)
    else:
        at, bt = sample_interface(cs, grid)
    return divergence_fields(grid, at, bt, m.values)
