"""Elementwise L2 projection, weighted-average quasi-interpolant and the jump norm."""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .linalg import coeff_matrix
from .mesh import ActiveMesh, _poly_eval, cardinal_pieces, local_basis, reference_gram
from .quadrature import gauss_01, tensor_gauss_01

WEIGHT_MODES = ("cut-area", "uniform", "single-element")


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class DgSpace:
    """Elementwise discontinuous copy of the active spline space.

    dG dof ``e * n + l`` is local function ``l`` restricted to active element ``e``.
    """

    active: ActiveMesh

    @property
    def n_local(self):
        return self.active.space.n_local

    @property
    def dim(self):
        return self.active.n_elements * self.n_local

    def block(self, e):
        n = self.n_local
        return np.arange(e * n, (e + 1) * n)

    def from_spline(self, coeffs):
        """dG coefficients of a spline given by active-dof coefficients."""
        return np.asarray(coeffs)[self.active.elem_dofs].ravel()

    def restriction_matrix(self):
        """Sparse map spline coefficients -> dG coefficients."""
        ed = self.active.elem_dofs
        return coeff_matrix(np.arange(ed.size), ed.ravel(), np.ones(ed.size), (self.dim, self.active.n_dofs))


@dataclass(frozen=True)
class WeightScheme:
    """kappa[e, l]: weight of active element e for its local function l (dof elem_dofs[e, l])."""

    kappa: np.ndarray
    mode: str
    restricted: bool

    def check(self, active, large_elem=None, large_dofs=None, tol=1e-12):
        k = self.kappa
        if np.any(k < 0) or np.any(k > 1 + tol):
            raise AssemblyError("weights outside [0, 1]")
        sums = np.bincount(active.elem_dofs.ravel(), weights=k.ravel(), minlength=active.n_dofs)
        if np.max(np.abs(sums - 1.0)) > tol:
            raise AssemblyError("weights of some basis function do not sum to one")
        if self.restricted and large_elem is not None:
            bad = (~large_elem[:, None]) & large_dofs[active.elem_dofs] & (k != 0)
            if np.any(bad):
                raise AssemblyError("restricted weights put mass on a small element")
        return True


def make_weights(active, mode="cut-area", large_elem=None, large_dofs=None):
    """Convex weights per (basis function, element) pair.

    With ``large_elem`` (bool per active element) and ``large_dofs`` (bool per
    active dof), weights of large functions vanish on small elements.
    """
    if mode not in WEIGHT_MODES:
        raise ValueError(f"unknown weight mode {mode!r}")
    ed = active.elem_dofs
    ne, n = ed.shape
    if mode == "cut-area":
        raw = np.repeat(active.area[:, None], n, axis=1)
    else:
        raw = np.ones((ne, n))
    restricted = large_elem is not None
    if restricted:
        allowed = ~((~large_elem[:, None]) & large_dofs[ed])
        raw = np.where(allowed, raw, 0.0)
    if mode == "single-element":
        dof = ed.ravel()
        elem = np.repeat(np.arange(ne), n)
        ok = raw.ravel() > 0
        area = active.area[elem]
        order = np.lexsort((elem, -area, ~ok, dof))
        first = np.ones(order.size, dtype=bool)
        first[1:] = dof[order][1:] != dof[order][:-1]
        pick = np.zeros(ed.size)
        pick[order[first]] = 1.0
        raw = pick.reshape(ne, n)
    sums = np.bincount(ed.ravel(), weights=raw.ravel(), minlength=active.n_dofs)
    if np.any(sums <= 0):
        raise AssemblyError("basis function without admissible element")
    kappa = raw / sums[ed]
    return WeightScheme(kappa, mode, restricted)


def projection_rule(p):
    return tensor_gauss_01(p + 2)


def dual_functionals(p):
    """Matrix D with dG coefficients c = D @ f(points) on the reference rule.

    Built as a Kronecker product of 1D duals; the 2D Gram solve loses about
    four digits more for p = 3.
    """
    g, w = gauss_01(p + 2)
    B = _poly_eval(cardinal_pieces(p), g, 0)
    G = (B * w[:, None]).T @ B
    D1 = np.linalg.solve(G, (B * w[:, None]).T)
    return np.kron(D1, D1)


def local_projection(active, f, elements=None):
    """Coefficients of P_{T,p} f in the local basis on each active element.

    ``elements`` are active-element positions (default all); returns (m, (p+1)^2).
    The projection uses the full element T with a tensor Gauss rule.
    """
    p = active.p
    mesh = active.space.mesh
    if elements is None:
        elements = np.arange(active.n_elements)
    elements = np.atleast_1d(elements)
    pts, _ = projection_rule(p)
    ll = mesh.element_lower_left(active.elements[elements])
    x = ll[:, None, :] + mesh.h * pts[None, :, :]
    fv = np.asarray(f(x.reshape(-1, 2)), dtype=float).reshape(len(elements), -1)
    D = dual_functionals(p)
    return fv @ D.T


def project_dg(active, f):
    """dG coefficient vector of the elementwise projection of ``f``."""
    return local_projection(active, f).ravel()


def assemble_Ih(active, weights):
    """Sparse interpolation matrix from the dG space to the active spline space."""
    ed = active.elem_dofs
    kappa = weights.kappa
    if kappa.shape != ed.shape:
        raise AssemblyError("weights do not match the local orderings of the active mesh")
    return coeff_matrix(ed.ravel(), np.arange(ed.size), kappa.ravel(), (active.n_dofs, ed.size))


def interpolate(active, weights, f):
    """Spline coefficients (active dofs) of the quasi-interpolant of ``f``."""
    return assemble_Ih(active, weights) @ project_dg(active, f)


def interior_faces(active):
    """Pairs (e_lo, e_hi, axis) of active elements sharing a face; e_hi is to the right/above."""
    mesh = active.space.mesh
    idx = active.elem_index
    ix, iy = mesh.element_ij(active.elements)
    out = []
    for axis, (dx, dy) in enumerate(((1, 0), (0, 1))):
        jx, jy = ix + dx, iy + dy
        ok = (jx < mesh.nx) & (jy < mesh.ny)
        nb = np.full(ix.shape, -1)
        nb[ok] = idx[mesh.element_id(jx[ok], jy[ok])]
        lo = np.nonzero(nb >= 0)[0]
        out.append(np.column_stack([lo, nb[lo], np.full(lo.size, axis)]))
    return np.concatenate(out).astype(np.int64)


def jump_norm(active, w, orders=None):
    """sqrt( sum_l h^{2l+1} || [D^l w] ||^2 ) over interior faces, l = 0..p.

    ``D^l`` is the full tensor of l-th partials (Frobenius norm); ``w`` is a dG
    coefficient vector.
    """
    p = active.p
    h = active.h
    n = active.space.n_local
    W = np.asarray(w, dtype=float).reshape(active.n_elements, n)
    faces = interior_faces(active)
    if orders is None:
        orders = range(p + 1)
    g, gw = gauss_01(p + 1)
    total = 0.0
    one = np.ones_like(g)
    zero = np.zeros_like(g)
    for axis in (0, 1):
        F = faces[faces[:, 2] == axis]
        if F.size == 0:
            continue
        for l in orders:
            for a in range(l + 1):
                dt, ds = (a, l - a)
                if axis == 0:
                    B_lo = local_basis(p, one, g, dt, ds)
                    B_hi = local_basis(p, zero, g, dt, ds)
                else:
                    B_lo = local_basis(p, g, one, dt, ds)
                    B_hi = local_basis(p, g, zero, dt, ds)
                jump = W[F[:, 0]] @ B_lo.T - W[F[:, 1]] @ B_hi.T
                # physical: derivative / h^l, face length h, factor h^{2l+1}
                total += comb(l, a) * h * h * np.sum(gw * jump ** 2)
    return float(np.sqrt(total))


def dg_l2_norm(active, w):
    """L2(Omega_h) norm of a dG function."""
    n = active.space.n_local
    W = np.asarray(w, dtype=float).reshape(active.n_elements, n)
    G = reference_gram(active.p) * active.h ** 2
    return float(np.sqrt(np.einsum("ei,ij,ej->", W, G, W)))
