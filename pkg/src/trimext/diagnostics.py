"""Measured constants for the interpolation and extension estimates.

Every constant is a ratio of two norms maximised (or, for lower bounds,
minimised) over random inputs.  Norms on the active domain use the full
elements; norms on the physical domain use the cut-cell rules.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .extension import overlap_count
from .interpolation import dg_l2_norm, jump_norm
from .mesh import cardinal_pieces, local_basis, reference_gram
from .nitsche import _scatter, inverse_inequality_ratio
from .quadrature import tensor_gauss_01

LOWER = ("dof_c1",)


@lru_cache(maxsize=None)
def reference_stiffness(p):
    """int_{[0,1]^2} grad phi_l . grad phi_m for the local functions (h-independent in 2D)."""
    pts, w = tensor_gauss_01(p + 1)
    gx = local_basis(p, pts[:, 0], pts[:, 1], 1, 0)
    gy = local_basis(p, pts[:, 0], pts[:, 1], 0, 1)
    K = (gx * w[:, None]).T @ gx + (gy * w[:, None]).T @ gy
    K.setflags(write=False)
    return K


def domain_matrices(active, dom):
    """Mass and stiffness matrices over the physical domain (cut rules)."""
    rule = dom.volume_rule(active.elements)
    nq = rule.weights.size
    P = np.asarray(cardinal_pieces(active.p))
    z = np.zeros(nq)
    zero_k = np.zeros((nq, 2, 2))
    eye_k = np.broadcast_to(np.eye(2), (nq, 2, 2))
    Mm, _ = _kernels.volume_local(rule.ptr, rule.local, rule.weights, zero_k, np.ones(nq), z, P, active.h)
    Kk, _ = _kernels.volume_local(rule.ptr, rule.local, rule.weights, eye_k, z, z, P, active.h)
    F0 = np.zeros((active.n_elements, active.space.n_local))
    return _scatter(active, Mm, F0)[0], _scatter(active, Kk, F0)[0]


def _quad(A, V):
    return np.einsum("ij,ij->j", V, A @ V)


def _dg_quad(active, W, G):
    """Column-wise sum_T w_T^T G w_T for dG vectors stored as columns."""
    n = active.space.n_local
    Wr = W.reshape(active.n_elements, n, -1)
    return np.einsum("eis,ij,ejs->s", Wr, G, Wr)


@dataclass
class LemmaConstants:
    pi_stability: float
    oswald: float
    jump_m0: float
    jump_m1: float
    ext_stability_m0: float
    ext_stability_m1: float
    dof_c1: float
    dof_c2: float
    overlap: int
    inverse_ratio: float
    sh_diam_ratio: float

    def as_dict(self):
        return asdict(self)


def lemma_constants(ext, dom, n_samples=50, rng=None):
    """Measure all constants for one extension (one mesh, shift and gamma)."""
    rng = np.random.default_rng(rng)
    active = ext.active
    part = ext.part
    h, p = active.h, active.p
    n = active.space.n_local
    ed = active.elem_dofs
    G = reference_gram(p) * h * h
    Kref = reference_stiffness(p)
    M, K = domain_matrices(active, dom)

    # interpolation on random dG data
    W = rng.standard_normal((active.n_elements * n, n_samples))
    S = ext.Ih @ W
    SW = S[ed].reshape(active.n_elements * n, -1)
    nw = _dg_quad(active, W, G)
    pi_stab = np.sqrt(_dg_quad(active, SW, G) / nw)
    osw = np.array([dg_l2_norm(active, W[:, j] - SW[:, j]) / jump_norm(active, W[:, j])
                    for j in range(n_samples)])

    # random splines in the large space
    nL = part.n_large_dofs
    VL = rng.standard_normal((nL, n_samples))
    V = np.zeros((active.n_dofs, n_samples))
    V[part.dofs_L] = VL
    l2 = np.sqrt(_quad(M, V))
    h1 = np.sqrt(_quad(K, V))
    BV = ext.Bh @ V
    jumps = np.array([jump_norm(active, BV[:, j]) for j in range(n_samples)])
    EV = ext.Eh @ VL
    EVd = EV[ed].reshape(active.n_elements * n, -1)
    e0 = np.sqrt(_dg_quad(active, EVd, G))
    e1 = np.sqrt(_dg_quad(active, EVd, Kref))
    dof = _quad(M, EV) / (h * h * np.sum(VL ** 2, axis=0))

    return LemmaConstants(
        pi_stability=float(pi_stab.max()),
        oswald=float(osw.max()),
        jump_m0=float(np.max(jumps / l2)),
        jump_m1=float(np.max(jumps / (h * h1))),
        ext_stability_m0=float(np.max(e0 / l2)),
        ext_stability_m1=float(np.max(e1 / h1)),
        dof_c1=float(dof.min()),
        dof_c2=float(dof.max()),
        overlap=overlap_count(ext),
        inverse_ratio=inverse_inequality_ratio(active, dom, ext.Eh, method="eig"),
        sh_diam_ratio=float(part.sh_diam_ratio),
    )


def worst_case(records):
    """Combine per-shift constants: min for lower bounds, max otherwise."""
    keys = records[0].as_dict().keys()
    out = {}
    for k in keys:
        vals = [r.as_dict()[k] for r in records]
        out[k] = min(vals) if k in LOWER else max(vals)
    return out


def drift(coarse, fine):
    """Relative change of every constant across one refinement."""
    return {k: abs(fine[k] - coarse[k]) / abs(coarse[k]) for k in coarse if coarse[k] != 0}
