"""Large/small partition, small-to-large association and the extension matrices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .interpolation import DgSpace, assemble_Ih, make_weights
from .linalg import canonical, coeff_matrix
from .mesh import ConfigurationError, shift_matrix


@dataclass
class ExtensionPartition:
    """Element and basis partition for a threshold ``gamma``.

    Arrays are indexed by active-element / active-dof position.  ``target[e]``
    is S_h(e) for small elements and ``e`` itself for large ones (-1 until
    ``build_Sh`` runs).
    """

    active: object
    gamma: float
    large: np.ndarray
    large_dofs: np.ndarray
    target: np.ndarray = field(default=None)
    sh_diam_ratio: float = float("nan")

    @property
    def small(self):
        return ~self.large

    @property
    def dofs_L(self):
        return np.nonzero(self.large_dofs)[0]

    @property
    def dofs_S(self):
        return np.nonzero(~self.large_dofs)[0]

    @property
    def n_large_dofs(self):
        return int(self.large_dofs.sum())

    def macro_elements(self):
        """{large element: array of active elements in its macro element}."""
        if self.target is None:
            raise ConfigurationError("S_h has not been built")
        return {int(L): np.nonzero(self.target == L)[0] for L in np.unique(self.target)}


def partition(active, gamma):
    """Split active elements by gamma * h^2 <= |T cap Omega|."""
    if gamma < 0:
        raise ConfigurationError("gamma must be non-negative")
    h = active.h
    large = gamma * h * h <= active.area
    if not np.any(large):
        raise ConfigurationError(f"gamma={gamma} leaves no large element")
    large_dofs = np.zeros(active.n_dofs, dtype=bool)
    large_dofs[active.elem_dofs[large].ravel()] = True
    return ExtensionPartition(active, float(gamma), large, large_dofs)


def build_Sh(part, dom):
    """Map every small element to the large element with the nearest cut centroid.

    Ties go to the smallest background element index.  Also records
    max diam(S_h(T) u T) / h.
    """
    active = part.active
    mesh = active.space.mesh
    cen = dom.centroid[active.elements]
    L = np.nonzero(part.large)[0]
    S = np.nonzero(~part.large)[0]
    target = np.arange(active.n_elements)
    if S.size:
        tree = cKDTree(cen[L])
        k = min(16, L.size)
        dist, idx = tree.query(cen[S], k=k)
        dist = np.atleast_2d(dist.reshape(S.size, k))
        idx = np.atleast_2d(idx.reshape(S.size, k))
        dmin = dist[:, :1]
        near = dist <= dmin * (1 + 1e-12) + 1e-300
        gid = np.where(near, active.elements[L[idx]], np.iinfo(np.int64).max)
        pick = np.argmin(gid, axis=1)
        target[S] = L[idx[np.arange(S.size), pick]]
    ix, iy = mesh.element_ij(active.elements)
    dx = np.abs(ix - ix[target])
    dy = np.abs(iy - iy[target])
    ratio = float(np.max(np.sqrt((dx + 1.0) ** 2 + (dy + 1.0) ** 2)))
    part.target = target
    part.sh_diam_ratio = ratio
    return part


def _extension_blocks(part):
    """Per active element the (n, n) block mapping source-element coefficients to it."""
    active = part.active
    mesh = active.space.mesh
    p = active.p
    ix, iy = mesh.element_ij(active.elements)
    dx = ix - ix[part.target]
    dy = iy - iy[part.target]
    n = active.space.n_local
    blocks = np.empty((active.n_elements, n, n))
    cache = {}
    for e in range(active.n_elements):
        key = (int(dx[e]), int(dy[e]))
        if key not in cache:
            cache[key] = np.kron(shift_matrix(p, key[1]), shift_matrix(p, key[0]))
        blocks[e] = cache[key]
    return blocks


def assemble_Bh(part):
    """Preliminary extension: spline coefficients -> dG coefficients, small columns zeroed."""
    if part.target is None:
        raise ConfigurationError("S_h has not been built")
    active = part.active
    n = active.space.n_local
    ne = active.n_elements
    blocks = _extension_blocks(part)
    rows = np.repeat(np.arange(ne * n), n)
    cols = np.repeat(active.elem_dofs[part.target], n, axis=0).ravel()
    B = coeff_matrix(rows, cols, blocks.ravel(), (ne * n, active.n_dofs))
    keep = sp.diags(part.large_dofs.astype(float))
    return canonical(B @ keep)


def assemble_Bh_dg(part):
    """The same extension acting dG -> dG (used for the macro-element invariance)."""
    active = part.active
    n = active.space.n_local
    ne = active.n_elements
    blocks = _extension_blocks(part)
    rows = np.repeat(np.arange(ne * n), n)
    src = part.target[:, None] * n + np.arange(n)[None, :]
    cols = np.repeat(src, n, axis=0).ravel()
    return coeff_matrix(rows, cols, blocks.ravel(), (ne * n, ne * n))


def restricted_weights(part, mode="cut-area"):
    return make_weights(part.active, mode, part.large, part.large_dofs)


def assemble_Eh(part, weights):
    """E_h = I_h B_h restricted to the large columns; shape (|I|, |I^L|)."""
    Ih = assemble_Ih(part.active, weights)
    Bh = assemble_Bh(part)
    return canonical((Ih @ Bh)[:, part.dofs_L])


@dataclass
class Extension:
    """All extension data for one (mesh, domain, gamma, weights) configuration."""

    part: ExtensionPartition
    weights: object
    Ih: sp.csr_matrix
    Bh: sp.csr_matrix
    Eh: sp.csr_matrix

    @property
    def active(self):
        return self.part.active


def build_extension(active, dom, gamma, mode="cut-area", restrict=True):
    part = build_Sh(partition(active, gamma), dom)
    if restrict:
        weights = restricted_weights(part, mode)
    else:
        weights = make_weights(active, mode)
    Ih = assemble_Ih(active, weights)
    Bh = assemble_Bh(part)
    if part.large.all():
        # no small elements: the product is the identity up to rounding of the weight sums
        Eh = sp.identity(active.n_dofs, format="csr")
    else:
        Eh = canonical((Ih @ Bh)[:, part.dofs_L])
    return Extension(part, weights, Ih, Bh, Eh)


def extended_supports(ext):
    """Boolean incidence (active elements x large dofs) of supp(phi_i^E)."""
    active = ext.active
    ne, n = active.elem_dofs.shape
    inc = coeff_matrix(np.repeat(np.arange(ne), n), active.elem_dofs.ravel(),
                       np.ones(ne * n), (ne, active.n_dofs))
    E = ext.Eh.copy()
    E.data = np.ones_like(E.data)
    S = inc @ E
    S.data = np.ones_like(S.data)
    return canonical(S)


def overlap_count(ext):
    """max_i #{j : supp(phi_i^E) and supp(phi_j^E) share an element}."""
    S = extended_supports(ext)
    O = (S.T @ S).tocsr()
    return int(np.diff(O.indptr).max())


def dg_of_macro_polynomials(part, coeffs):
    """dG vector of a macro-elementwise polynomial.

    ``coeffs[e]`` gives, for each large element ``e`` (active index), the local
    coefficients of the polynomial on that element; it is extended to the whole
    macro element.
    """
    blocks = _extension_blocks(part)
    n = part.active.space.n_local
    out = np.empty((part.active.n_elements, n))
    for e in range(part.active.n_elements):
        out[e] = blocks[e] @ coeffs[part.target[e]]
    return out.ravel()


def dg_space(part):
    return DgSpace(part.active)
