"""Uniform background mesh, maximal-regularity tensor B-splines, active mesh.

Basis functions are indexed lexicographically, ``i = b * nbx + a`` with
``a`` the x-index.  On every element the restrictions of the (p+1)^2
non-vanishing functions are the same cardinal B-spline pieces, expressed in
local coordinates ``(t, s)`` in the reference square.  Local index
``l = q * (p + 1) + r`` refers to the function with ``a = ix + r`` and
``b = iy + q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial, ceil

import numpy as np


class ConfigurationError(ValueError):
    """Invalid mesh / domain / parameter combination."""


def _rational_pieces(p):
    """Exact monomial coefficients (as Fractions) of the local pieces."""
    rows = []
    for r in range(p + 1):
        k = p - r  # knot span of the cardinal spline on [0, p+1]
        coeffs = [Fraction(0)] * (p + 1)
        for j in range(k + 1):
            c = Fraction((-1) ** j * comb(p + 1, j), factorial(p))
            shift = k - j
            for m in range(p + 1):
                coeffs[m] += c * comb(p, m) * Fraction(shift) ** (p - m)
        rows.append(coeffs)
    return rows


def _rational_solve(A, B):
    """Solve A X = B exactly (lists of Fractions, A square and invertible)."""
    n = len(A)
    M = [list(A[i]) + list(B[i]) for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        inv = 1 / M[col][col]
        M[col] = [v * inv for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [row[n:] for row in M]


@lru_cache(maxsize=None)
def cardinal_pieces(p):
    """Monomial coefficients of the local B-spline pieces on one element.

    Returns ``P`` of shape (p+1, p+1) with ``phi_r(t) = sum_k P[r, k] t**k`` for
    ``t`` in [0, 1]; row ``r`` is the function whose global index is ``ix + r``.
    """
    if p < 1:
        raise ConfigurationError("polynomial order must be >= 1")
    P = np.array([[float(c) for c in row] for row in _rational_pieces(p)])
    P.setflags(write=False)
    return P


@lru_cache(maxsize=None)
def shift_matrix(p, d):
    """Express extended pieces of a neighbour element in the local basis.

    For an element ``T`` lying ``d`` elements (along one axis) away from a
    source element ``T'``, returns ``C`` with
    ``phi'_j(t + d) = sum_r C[r, j] phi_r(t)``: column ``j`` holds the
    coefficients, on ``T``, of the polynomial extension of source piece ``j``.
    Computed in exact rational arithmetic.
    """
    P = _rational_pieces(p)
    n = p + 1
    d = Fraction(int(d))
    # S[j][m]: monomial coefficients of phi'_j(t + d)
    S = [[sum(P[j][k] * comb(k, m) * d ** (k - m) for k in range(m, n)) for m in range(n)]
         for j in range(n)]
    PT = [[P[r][k] for r in range(n)] for k in range(n)]
    ST = [[S[j][m] for j in range(n)] for m in range(n)]
    C = np.array([[float(v) for v in row] for row in _rational_solve(PT, ST)])
    C.setflags(write=False)
    return C


def _poly_eval(P, t, deriv=0):
    """Evaluate all rows of a monomial coefficient matrix at points ``t``."""
    n = P.shape[1]
    out = np.zeros((t.size, P.shape[0]))
    for k in range(deriv, n):
        fac = 1.0
        for m in range(deriv):
            fac *= k - m
        out += np.outer(t ** (k - deriv) * fac, P[:, k])
    return out


def local_basis(p, t, s, dt=0, ds=0):
    """Partial derivatives d^dt/dt d^ds/ds of the (p+1)^2 local functions.

    Returns shape (npts, (p+1)^2) in local-index order; derivatives are with
    respect to reference coordinates.
    """
    P = cardinal_pieces(p)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    X = _poly_eval(P, t, dt)
    Y = _poly_eval(P, s, ds)
    return (Y[:, :, None] * X[:, None, :]).reshape(t.size, -1)


@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform square mesh; element (i, j) has lower-left corner ``origin + shift + (i, j) h``."""

    origin: tuple
    h: float
    nx: int
    ny: int
    shift: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError("mesh size must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError("mesh needs at least one element per axis")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "shift", (float(self.shift[0]), float(self.shift[1])))

    @classmethod
    def around(cls, bbox, h, p, shift=(0.0, 0.0)):
        """Mesh covering ``bbox = (xmin, ymin, xmax, ymax)`` with p+1 spare layers
        for any shift in [0, h)^2."""
        xmin, ymin, xmax, ymax = bbox
        nx = int(ceil((xmax - xmin) / h)) + 2 * p + 3
        ny = int(ceil((ymax - ymin) / h)) + 2 * p + 3
        origin = (xmin - (p + 2) * h, ymin - (p + 2) * h)
        return cls(origin, h, nx, ny, tuple(shift))

    @property
    def corner(self):
        return (self.origin[0] + self.shift[0], self.origin[1] + self.shift[1])

    @property
    def n_elements(self):
        return self.nx * self.ny

    @property
    def extent(self):
        x0, y0 = self.corner
        return (x0, y0, x0 + self.nx * self.h, y0 + self.ny * self.h)

    def element_ij(self, e):
        e = np.asarray(e)
        return e % self.nx, e // self.nx

    def element_id(self, ix, iy):
        return np.asarray(iy) * self.nx + np.asarray(ix)

    def element_box(self, e):
        ix, iy = self.element_ij(e)
        x0, y0 = self.corner
        h = self.h
        return (x0 + ix * h, y0 + iy * h, x0 + (ix + 1) * h, y0 + (iy + 1) * h)

    def element_lower_left(self, e):
        ix, iy = self.element_ij(np.asarray(e))
        x0, y0 = self.corner
        return np.stack([x0 + ix * self.h, y0 + iy * self.h], axis=-1)

    def element_centers(self, e=None):
        if e is None:
            e = np.arange(self.n_elements)
        return self.element_lower_left(e) + 0.5 * self.h

    def locate(self, x):
        """Element ids and local coordinates of points (closed elements; upper faces
        belong to the lower element only at the mesh boundary)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        x0, y0 = self.corner
        u = (x[:, 0] - x0) / self.h
        v = (x[:, 1] - y0) / self.h
        ix = np.clip(np.floor(u).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(np.floor(v).astype(np.int64), 0, self.ny - 1)
        local = np.column_stack([u - ix, v - iy])
        return self.element_id(ix, iy), local

    def to_local(self, e, x):
        ll = self.element_lower_left(e)
        return (np.asarray(x, dtype=float) - ll) / self.h


@dataclass(frozen=True)
class SplineSpace:
    """Tensor B-splines of order p and regularity p-1 on a background mesh.

    Knots sit on the mesh lines and continue p spans past the mesh rectangle,
    so every function with an element in its support is an ordinary uniform
    B-spline and ``sum_i phi_i = 1`` on the whole mesh.
    """

    mesh: BackgroundMesh
    p: int

    def __post_init__(self):
        if self.p < 1:
            raise ConfigurationError("polynomial order must be >= 1")

    @property
    def k(self):
        return self.p - 1

    @property
    def nbx(self):
        return self.mesh.nx + self.p

    @property
    def nby(self):
        return self.mesh.ny + self.p

    @property
    def n_basis(self):
        return self.nbx * self.nby

    @property
    def n_local(self):
        return (self.p + 1) ** 2

    def basis_ij(self, i):
        i = np.asarray(i)
        return i % self.nbx, i // self.nbx

    def element_dofs(self, e):
        """Global indices I_T of the functions supported on element(s) ``e``.

        Shape (len(e), (p+1)^2), local-index order.
        """
        e = np.atleast_1d(np.asarray(e))
        ix, iy = self.mesh.element_ij(e)
        r = np.arange(self.p + 1)
        a = ix[:, None, None] + r[None, None, :]
        b = iy[:, None, None] + r[None, :, None]
        return (b * self.nbx + a).reshape(e.size, -1)

    def support_elements(self, i):
        """Background elements in the support of basis function ``i``."""
        a, b = self.basis_ij(int(i))
        ixs = np.arange(max(a - self.p, 0), min(a, self.mesh.nx - 1) + 1)
        iys = np.arange(max(b - self.p, 0), min(b, self.mesh.ny - 1) + 1)
        IX, IY = np.meshgrid(ixs, iys)
        return self.mesh.element_id(IX.ravel(), IY.ravel())

    def support_rect(self, i):
        a, b = self.basis_ij(int(i))
        x0, y0 = self.mesh.corner
        h = self.mesh.h
        return (x0 + (a - self.p) * h, y0 + (b - self.p) * h, x0 + (a + 1) * h, y0 + (b + 1) * h)


def eval_basis(space, i, x):
    """Value and gradient of global basis function ``i`` at points ``x``.

    Returns (values (n,), gradients (n, 2)); zero outside the support.
    """
    if not 0 <= int(i) < space.n_basis:
        raise IndexError(f"basis index {i} out of range [0, {space.n_basis})")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xmin, ymin, xmax, ymax = space.mesh.extent
    tol = 1e-12 * space.mesh.h
    if np.any((x[:, 0] < xmin - tol) | (x[:, 0] > xmax + tol)
              | (x[:, 1] < ymin - tol) | (x[:, 1] > ymax + tol)):
        raise ConfigurationError("evaluation point outside the mesh rectangle")
    e, loc = space.mesh.locate(x)
    dofs = space.element_dofs(e)
    hit = dofs == int(i)
    vals = np.zeros(len(x))
    grads = np.zeros((len(x), 2))
    rows = np.nonzero(hit.any(axis=1))[0]
    if rows.size:
        l = hit[rows].argmax(axis=1)
        t, s = loc[rows, 0], loc[rows, 1]
        h = space.mesh.h
        p = space.p
        vals[rows] = local_basis(p, t, s)[np.arange(rows.size), l]
        grads[rows, 0] = local_basis(p, t, s, 1, 0)[np.arange(rows.size), l] / h
        grads[rows, 1] = local_basis(p, t, s, 0, 1)[np.arange(rows.size), l] / h
    return vals, grads


@dataclass(frozen=True)
class ElementBasis:
    """I_T together with each function's polynomial on the reference square.

    ``coeffs[l, a, b]`` multiplies ``t**a * s**b`` for local function ``l``.
    """

    element: int
    indices: np.ndarray
    coeffs: np.ndarray

    def evaluate(self, t, s):
        t = np.atleast_1d(t)
        s = np.atleast_1d(s)
        n = self.coeffs.shape[1]
        T = np.vander(t, n, increasing=True)
        S = np.vander(s, n, increasing=True)
        return np.einsum("qa,lab,qb->ql", T, self.coeffs, S)


def element_basis(space, e):
    e = int(e)
    if not 0 <= e < space.mesh.n_elements:
        raise IndexError(f"element {e} not in mesh")
    P = cardinal_pieces(space.p)
    coeffs = np.einsum("ra,qb->qrab", P, P).reshape(space.n_local, space.p + 1, space.p + 1)
    return ElementBasis(e, space.element_dofs(e)[0], coeffs)


@lru_cache(maxsize=None)
def reference_gram(p, n=None):
    """Gram matrix of the local functions on the unit reference square."""
    from .quadrature import tensor_gauss_01

    pts, w = tensor_gauss_01(n or p + 1)
    B = local_basis(p, pts[:, 0], pts[:, 1])
    G = (B * w[:, None]).T @ B
    G.setflags(write=False)
    return G


@dataclass(frozen=True)
class ActiveMesh:
    """Active elements (positive cut area) and active basis functions.

    ``elem_dofs`` holds I_T in active (compressed) numbering.
    """

    space: SplineSpace
    elements: np.ndarray
    area: np.ndarray
    dofs: np.ndarray
    elem_dofs: np.ndarray
    dof_index: np.ndarray = field(repr=False)
    elem_index: np.ndarray = field(repr=False)

    @property
    def n_elements(self):
        return self.elements.size

    @property
    def n_dofs(self):
        return self.dofs.size

    @property
    def h(self):
        return self.space.mesh.h

    @property
    def p(self):
        return self.space.p

    def bounds(self):
        """Bounding box of Omega_h."""
        lo = self.space.mesh.element_lower_left(self.elements)
        return (lo[:, 0].min(), lo[:, 1].min(), lo[:, 0].max() + self.h, lo[:, 1].max() + self.h)

    def dof_elements(self):
        """CSR-like incidence: for each active dof, its active elements."""
        n = self.space.n_local
        flat = self.elem_dofs.ravel()
        order = np.argsort(flat, kind="stable")
        ptr = np.zeros(self.n_dofs + 1, dtype=np.int64)
        np.add.at(ptr, flat + 1, 1)
        return np.cumsum(ptr), order // n, order % n


def active_extract(space, dom):
    """Active mesh of a trimmed domain (see ``geometry.classify_and_clip``)."""
    mesh = space.mesh
    if dom.mesh != mesh:
        raise ConfigurationError("domain was classified on a different mesh")
    xmin, ymin, xmax, ymax = dom.bbox
    ex = mesh.extent
    margin = (space.p + 1) * mesh.h * (1 - 1e-12)
    if (xmin - ex[0] < margin or ymin - ex[1] < margin
            or ex[2] - xmax < margin or ex[3] - ymax < margin):
        raise ConfigurationError(
            f"domain needs {space.p + 1} element layers of margin inside the mesh")
    elements = np.nonzero(dom.area > 0)[0]
    if elements.size == 0:
        raise ConfigurationError("domain does not cover any element")
    glob = space.element_dofs(elements)
    dofs = np.unique(glob)
    dof_index = np.full(space.n_basis, -1, dtype=np.int64)
    dof_index[dofs] = np.arange(dofs.size)
    elem_index = np.full(mesh.n_elements, -1, dtype=np.int64)
    elem_index[elements] = np.arange(elements.size)
    return ActiveMesh(space, elements, dom.area[elements].copy(), dofs,
                      dof_index[glob], dof_index, elem_index)
