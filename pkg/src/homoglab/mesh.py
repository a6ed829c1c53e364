"""Uniform node lattices and second-order difference operators.

Every field is a numpy array whose trailing ``d`` axes follow the grid,
with axis 0 of the grid along y1, the interface normal.  Periodic axes wrap
by modular indexing.  Dirichlet axes keep their two end nodes in the array;
those nodes carry boundary values and are dropped from the unknowns.

Discrete operators
------------------
With forward, backward and centred differences ``D+``, ``D-``, ``Dc`` and the
forward average ``Av+``, the face flux of ``u`` for a matrix field ``M`` is::

    F_i(u) = Av+_i(M_ii) D+_i u + sum_{j != i} Av+_i(M_ij Dc_j u)

and the divergence-form operator is ``sum_i D-_i F_i(u)``.  Since
``Dc = D- Av+`` this is the arithmetic-face, centred-mixed stencil, and its
matrix for ``M`` is the transpose of the one for ``M.T``.
"""

import numpy as np
import scipy.sparse as sp

from .errors import GridError


class Grid:
    """Uniform lattice with equal spacing on every axis.

    Parameters
    ----------
    d : int
        Dimension, 2 or 3.
    shape : tuple of int
        Nodes per axis, Dirichlet end nodes included.
    h : float
        Spacing.
    origin : tuple of float
        Coordinate of node 0 along each axis.
    periodic : tuple of bool
        Whether each axis wraps.
    """

    kind = "grid"

    def __init__(self, d, shape, h, origin, periodic):
        if d not in (2, 3):
            raise GridError("dimension must be 2 or 3, got %r" % (d,))
        if len(shape) != d or len(origin) != d or len(periodic) != d:
            raise GridError("shape, origin and periodic must have length d")
        self.d = d
        self.shape = tuple(int(s) for s in shape)
        self.h = float(h)
        self.origin = tuple(float(o) for o in origin)
        self.periodic = tuple(bool(p) for p in periodic)
        self._ops = {}

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    def axis_coords(self, k):
        return self.origin[k] + self.h * np.arange(self.shape[k])

    def coords(self):
        """Broadcastable coordinate arrays, one per axis."""
        return np.meshgrid(*[self.axis_coords(k) for k in range(self.d)],
                           indexing="ij", sparse=True)

    def key(self):
        return (self.kind, self.d, self.shape, round(self.h, 15), self.origin, self.periodic)

    def same_as(self, other):
        return isinstance(other, Grid) and self.key() == other.key()

    def describe(self):
        return {"kind": self.kind, "d": self.d, "shape": list(self.shape), "h": self.h,
                "origin": list(self.origin), "periodic": list(self.periodic)}

    def boundary_mask(self):
        """True on Dirichlet end nodes."""
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.d):
            if not self.periodic[k]:
                idx = [slice(None)] * self.d
                idx[k] = 0
                mask[tuple(idx)] = True
                idx[k] = -1
                mask[tuple(idx)] = True
        return mask

    def free_index(self):
        """Flat indices of the unknowns (all non-boundary nodes)."""
        return np.flatnonzero(~self.boundary_mask().ravel())

    def quadrature_mask(self):
        """Nodes that carry weight h**d in sums (last Dirichlet node excluded)."""
        mask = np.ones(self.shape, dtype=bool)
        for k in range(self.d):
            if not self.periodic[k]:
                idx = [slice(None)] * self.d
                idx[k] = -1
                mask[tuple(idx)] = False
        return mask

    def sample(self, fn, rank=0):
        """Evaluate ``fn`` on the nodes and broadcast to full shape."""
        vals = fn(self.coords())
        lead = (self.d,) * rank
        if isinstance(vals, (list, tuple)):
            # evaluators may return per-component arrays of mixed broadcast shape
            out = np.empty(lead + self.shape)
            for i, v in enumerate(vals):
                out[i] = np.broadcast_to(np.asarray(v, dtype=float), out.shape[1:])
            return out
        return np.ascontiguousarray(np.broadcast_to(np.asarray(vals, dtype=float),
                                                    lead + self.shape))

    # sparse difference operators, cached per grid
    def op(self, name, k):
        key = (name, k)
        if key not in self._ops:
            self._ops[key] = _axis_operator(self, name, k)
        return self._ops[key]

    def __repr__(self):
        return "%s(d=%d, shape=%s, h=%.6g)" % (type(self).__name__, self.d, self.shape, self.h)


class TorusGrid(Grid):
    """Unit torus [0, 1)^d with n nodes per axis."""

    kind = "torus"

    def __init__(self, d, n):
        self.n = int(n)
        super().__init__(d, (self.n,) * d, 1.0 / self.n, (0.0,) * d, (True,) * d)


class CylinderGrid(Grid):
    """Cylinder R x T^{d-1} cut to a finite axial range.

    ``topology='truncated-dirichlet'`` keeps [-L, L] with Dirichlet ends;
    ``topology='double-interface-torus'`` wraps [-2L, 2L) periodically;
    ``topology='reflecting'`` keeps [-2L, 2L] with mirror (zero-flux) ends,
    where every node is an unknown.
    """

    kind = "cylinder"
    TOPOLOGIES = ("truncated-dirichlet", "double-interface-torus", "reflecting")

    def __init__(self, d, L, n_cell, topology="truncated-dirichlet"):
        if topology not in self.TOPOLOGIES:
            raise GridError("unknown cylinder topology %r" % (topology,))
        self.L = int(L)
        self.n_cell = int(n_cell)
        self.topology = topology
        h = 1.0 / self.n_cell
        if topology == "truncated-dirichlet":
            shape = (2 * self.L * self.n_cell + 1,) + (self.n_cell,) * (d - 1)
            origin = (-float(self.L),) + (0.0,) * (d - 1)
            periodic = (False,) + (True,) * (d - 1)
        elif topology == "reflecting":
            shape = (4 * self.L * self.n_cell + 1,) + (self.n_cell,) * (d - 1)
            origin = (-2.0 * self.L,) + (0.0,) * (d - 1)
            periodic = (False,) + (True,) * (d - 1)
        else:
            shape = (4 * self.L * self.n_cell,) + (self.n_cell,) * (d - 1)
            origin = (-2.0 * self.L,) + (0.0,) * (d - 1)
            periodic = (True,) * d
        super().__init__(d, shape, h, origin, periodic)

    def key(self):
        return super().key() + (self.topology,)

    def boundary_mask(self):
        if self.topology == "reflecting":
            return np.zeros(self.shape, dtype=bool)
        return super().boundary_mask()

    def cell_slice(self, j):
        """Axial index slice of the unit cell [j, j+1) x T^{d-1}."""
        i0 = int(round((j - self.origin[0]) / self.h))
        i1 = i0 + self.n_cell
        if i0 < 0 or i1 > self.shape[0]:
            raise GridError("cell [%g, %g) lies outside the grid" % (j, j + 1))
        return slice(i0, i1)

    def axial_index(self, y1):
        return int(round((y1 - self.origin[0]) / self.h))

    def truncated(self, L=None):
        """Truncated grid of half-length L whose nodes are a subset of this one."""
        return CylinderGrid(self.d, self.L if L is None else L, self.n_cell, "truncated-dirichlet")


class BoxGrid(Grid):
    """Interface box [-ell, ell] x T^{d-1}_P with Dirichlet ends.

    Parameters
    ----------
    d : int
    h : float
        Spacing; ``ell / h`` and ``period / h`` must be integers.
    half_length : float
    period : float
        Tangential period.
    """

    kind = "box"

    def __init__(self, d, h, half_length=1.0, period=1.0):
        n_ax = 2.0 * half_length / h
        n_tan = period / h
        if abs(n_ax - round(n_ax)) > 1e-9 or abs(n_tan - round(n_tan)) > 1e-9:
            raise GridError("box extents must be integer multiples of h")
        self.half_length = float(half_length)
        self.period = float(period)
        shape = (int(round(n_ax)) + 1,) + (int(round(n_tan)),) * (d - 1)
        origin = (-self.half_length,) + (0.0,) * (d - 1)
        super().__init__(d, shape, h, origin, (False,) + (True,) * (d - 1))


class Field:
    """Values on a grid: scalar, vector (d) or matrix (d x d).

    Parameters
    ----------
    grid : Grid
    values : ndarray
        Shape ``grid.shape``, ``(d,) + grid.shape`` or ``(d, d) + grid.shape``.
    """

    RANKS = {0: "scalar", 1: "vector", 2: "matrix"}

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        extra = values.ndim - grid.d
        if extra not in (0, 1, 2) or values.shape[extra:] != grid.shape \
                or any(s != grid.d for s in values.shape[:extra]):
            raise GridError("values of shape %s do not fit %r" % (values.shape, grid))
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)

    @property
    def rank(self):
        return self.RANKS[self.values.ndim - self.grid.d]

    def __repr__(self):
        return "Field(%s on %r)" % (self.rank, self.grid)


def build_torus_grid(d, n):
    """Unit torus with n nodes per axis.

    Raises
    ------
    GridError
        For d outside {2, 3}, n below 8 or odd n.
    """
    if d not in (2, 3):
        raise GridError("dimension must be 2 or 3, got %r" % (d,))
    if int(n) != n or n < 8 or n % 2:
        raise GridError("n must be an even integer >= 8, got %r" % (n,))
    return TorusGrid(d, int(n))


def build_cylinder_grid(d, L, n_cell, topology="truncated-dirichlet"):
    """Cylinder grid with integer half-length L >= 2.

    For the 'double-interface-torus' and 'reflecting' topologies the axial
    extent is 2L on each side of the interface.
    """
    if int(L) != L or L < 2:
        raise GridError("half_length must be an integer >= 2, got %r" % (L,))
    if int(n_cell) != n_cell or n_cell < 4 or n_cell % 2:
        raise GridError("n_cell must be an even integer >= 4, got %r" % (n_cell,))
    return CylinderGrid(d, int(L), int(n_cell), topology)


# ---------------------------------------------------------------- arrays

def _gax(u, grid, k):
    return u.ndim - grid.d + k


def dplus(u, grid, k):
    a = _gax(u, grid, k)
    return (np.roll(u, -1, axis=a) - u) / grid.h


def dminus(u, grid, k):
    a = _gax(u, grid, k)
    return (u - np.roll(u, 1, axis=a)) / grid.h


def dcen(u, grid, k):
    a = _gax(u, grid, k)
    return (np.roll(u, -1, axis=a) - np.roll(u, 1, axis=a)) / (2.0 * grid.h)


def avg_plus(u, grid, k):
    a = _gax(u, grid, k)
    return 0.5 * (u + np.roll(u, -1, axis=a))


def avg_minus(u, grid, k):
    a = _gax(u, grid, k)
    return 0.5 * (u + np.roll(u, 1, axis=a))


def face_flux(grid, M, u):
    """Face fluxes ``F_i(u)``, shape ``(d,) + grid.shape``.

    ``F_i`` lives on the face between a node and its +e_i neighbour.
    """
    d = grid.d
    out = np.empty((d,) + grid.shape)
    for i in range(d):
        f = avg_plus(M[i, i], grid, i) * dplus(u, grid, i)
        for j in range(d):
            if j != i:
                f += avg_plus(M[i, j] * dcen(u, grid, j), grid, i)
        out[i] = f
    return out


def linear_flux(grid, M, j):
    """Face fluxes of the coordinate function y_j (periodic even though y_j is not)."""
    return np.stack([avg_plus(M[i, j], grid, i) for i in range(grid.d)])


def divergence(grid, F):
    """Backward divergence ``sum_i D-_i F_i`` of a face-staggered vector."""
    return sum(dminus(F[i], grid, i) for i in range(grid.d))


# ---------------------------------------------------------------- sparse

def _circulant(n, entries):
    rows, cols, vals = [], [], []
    base = np.arange(n)
    for off, v in entries:
        rows.append(base)
        cols.append((base + off) % n)
        vals.append(np.full(n, v))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def _axis_operator(grid, name, k):
    n, h = grid.shape[k], grid.h
    table = {
        "dplus": [(0, -1.0 / h), (1, 1.0 / h)],
        "dminus": [(0, 1.0 / h), (-1, -1.0 / h)],
        "dcen": [(1, 0.5 / h), (-1, -0.5 / h)],
        "avgp": [(0, 0.5), (1, 0.5)],
        "avgm": [(0, 0.5), (-1, 0.5)],
        "d2": [(-1, 1.0 / h ** 2), (0, -2.0 / h ** 2), (1, 1.0 / h ** 2)],
    }
    op = _circulant(n, table[name])
    if k == 0 and getattr(grid, "topology", None) == "reflecting" and name in ("d2", "dcen"):
        # mirror closure u[-1] = u[1]: constants stay in the kernel
        op = op.tolil()
        op[0, :] = 0.0
        op[n - 1, :] = 0.0
        if name == "d2":
            op[0, 0] = op[n - 1, n - 1] = -2.0 / h ** 2
            op[0, 1] = op[n - 1, n - 2] = 2.0 / h ** 2
        op = op.tocsr()
    mats = [sp.identity(s, format="csr") for s in grid.shape]
    mats[k] = op
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def divergence_form_matrix(grid, M):
    """Sparse matrix of ``u -> sum_i D-_i F_i(u)`` on all nodes.

    Rows of Dirichlet end nodes are meaningless; restrict with
    ``restrict_to_free``.
    """
    d = grid.d
    out = None
    for i in range(d):
        face = avg_plus(M[i, i], grid, i).ravel()
        term = grid.op("dminus", i) @ sp.diags(face) @ grid.op("dplus", i)
        out = term if out is None else out + term
        for j in range(d):
            if j != i:
                out = out + grid.op("dcen", i) @ sp.diags(M[i, j].ravel()) @ grid.op("dcen", j)
    return out.tocsr()


def nondivergence_matrix(grid, a_tilde, b_tilde):
    """Sparse matrix of ``u -> a_ij D_ij u + b_i Dc_i u`` (four-point cross for i != j)."""
    d = grid.d
    out = None
    for i in range(d):
        term = sp.diags(a_tilde[i, i].ravel()) @ grid.op("d2", i)
        out = term if out is None else out + term
        for j in range(d):
            if j != i:
                out = out + sp.diags(a_tilde[i, j].ravel()) @ (grid.op("dcen", i) @ grid.op("dcen", j))
        out = out + sp.diags(b_tilde[i].ravel()) @ grid.op("dcen", i)
    return out.tocsr()


def laplacian_matrix(grid):
    """Compact (2d+1)-point Laplacian."""
    out = None
    for k in range(grid.d):
        out = grid.op("d2", k) if out is None else out + grid.op("d2", k)
    return out.tocsr()


def restrict_to_free(grid, A):
    """Rows and columns of the unknowns only."""
    if all(grid.periodic):
        return A
    free = grid.free_index()
    return A[free][:, free]


# ---------------------------------------------------------------- public ops

def _check_same(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if not g.same_as(f.grid):
            raise GridError("grid mismatch: %r vs %r" % (g, f.grid))
    return g


def apply_divergence_form(M, u):
    """Discrete ``div(M grad u)`` as a scalar Field.

    Parameters
    ----------
    M : Field
        Matrix field; need not be symmetric.
    u : Field
        Scalar field.  On Dirichlet grids its end-node values act as data.

    Returns
    -------
    Field
        Zero on Dirichlet end nodes.
    """
    grid = _check_same(M, u)
    out = divergence(grid, face_flux(grid, M.values, u.values))
    out[grid.boundary_mask()] = 0.0
    return Field(grid, out)


def apply_nondivergence(a_tilde, b_tilde, u):
    """Discrete ``a_ij D_ij u + b_i D_i u`` as a scalar Field."""
    grid = _check_same(a_tilde, b_tilde, u)
    A = nondivergence_matrix(grid, a_tilde.values, b_tilde.values)
    out = (A @ u.values.ravel()).reshape(grid.shape)
    out[grid.boundary_mask()] = 0.0
    return Field(grid, out)


def integrate(u, window=None):
    """Node-sum quadrature ``sum(u) h^d``.

    Parameters
    ----------
    u : Field or (Grid, ndarray)
    window : int, optional
        Axial unit cell [window, window+1) on a cylinder grid.  None for the
        whole grid.
    """
    if isinstance(u, Field):
        grid, vals = u.grid, u.values
    else:
        grid, vals = u
    w = grid.h ** grid.d
    if window is None:
        return float(np.sum(vals[..., grid.quadrature_mask()]) * w)
    if not isinstance(grid, CylinderGrid):
        raise GridError("axial windows need a cylinder grid")
    sl = grid.cell_slice(window)
    lead = (slice(None),) * (vals.ndim - grid.d)
    return float(np.sum(vals[lead + (sl,)]) * w)


def cell_integrals(grid, vals, cells):
    """Integrals over several axial unit cells."""
    return np.array([integrate((grid, vals), window=j) for j in cells])


def tile_axial(cell_vals, grid):
    """Repeat unit-cell values along every axis of a grid with the same spacing.

    Parameters
    ----------
    cell_vals : ndarray
        Values on a torus of ``1/grid.h`` nodes per axis, components leading.
    grid : Grid
        Any grid whose node coordinates are integer multiples of ``h``.
    """
    n = int(round(1.0 / grid.h))
    lead = cell_vals.ndim - grid.d
    if cell_vals.shape[lead:] != (n,) * grid.d:
        raise GridError("cell values do not match spacing %g" % grid.h)
    out = cell_vals
    for k in range(grid.d):
        idx = np.mod(np.rint(grid.axis_coords(k) / grid.h).astype(np.int64), n)
        out = np.take(out, idx, axis=lead + k)
    return out
