"""Cut Nitsche discretisation of the Dirichlet Poisson problem.

The flat problem is the special case of the surface forms with the identity
map, and both go through the same assembly path.  Right-hand sides and
boundary data are functions on the reference (parameter) domain.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _kernels
from .geometry import CUT, SurfaceMap, identity_map
from .linalg import SolverError, canonical, coeff_matrix, dense_solve, pcg_solve, triple_product
from .mesh import cardinal_pieces

DENSE_SOLVE_LIMIT = 3000


def default_beta(p):
    return 25.0 * p * p


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact solution with gradient and Hessian; ``f`` is minus its Laplacian."""

    u: Callable
    grad: Callable
    hess: Callable
    name: str = "manufactured"

    def f(self, x):
        H = self.hess(x)
        return -(H[:, 0, 0] + H[:, 1, 1])

    def surface_rhs(self, smap: SurfaceMap):
        """Right-hand side of the pulled-back Laplace-Beltrami problem."""

        def f(x):
            x = np.atleast_2d(x)
            return -smap.laplace_beltrami(x, self.grad(x), self.hess(x))

        return f


def bean_solution():
    """u = (sin 2x + x cos 3y) / 10."""

    def u(x):
        return (np.sin(2 * x[:, 0]) + x[:, 0] * np.cos(3 * x[:, 1])) / 10

    def grad(x):
        return np.column_stack([(2 * np.cos(2 * x[:, 0]) + np.cos(3 * x[:, 1])) / 10,
                                -3 * x[:, 0] * np.sin(3 * x[:, 1]) / 10])

    def hess(x):
        H = np.zeros((len(x), 2, 2))
        H[:, 0, 0] = -4 * np.sin(2 * x[:, 0]) / 10
        H[:, 0, 1] = H[:, 1, 0] = -3 * np.sin(3 * x[:, 1]) / 10
        H[:, 1, 1] = -9 * x[:, 0] * np.cos(3 * x[:, 1]) / 10
        return H

    return ManufacturedSolution(u, grad, hess, "bean")


def polynomial_solution(a, b, c0=0.0):
    """u = (x - c0)^a * y^b."""

    def u(x):
        return (x[:, 0] - c0) ** a * x[:, 1] ** b

    def d(v, k, m):
        if m > k:
            return np.zeros_like(v)
        coef = 1.0
        for j in range(m):
            coef *= k - j
        return coef * v ** (k - m)

    def grad(x):
        X, Y = x[:, 0] - c0, x[:, 1]
        return np.column_stack([d(X, a, 1) * d(Y, b, 0), d(X, a, 0) * d(Y, b, 1)])

    def hess(x):
        X, Y = x[:, 0] - c0, x[:, 1]
        H = np.zeros((len(x), 2, 2))
        H[:, 0, 0] = d(X, a, 2) * d(Y, b, 0)
        H[:, 0, 1] = H[:, 1, 0] = d(X, a, 1) * d(Y, b, 1)
        H[:, 1, 1] = d(X, a, 0) * d(Y, b, 2)
        return H

    return ManufacturedSolution(u, grad, hess, f"x^{a}y^{b}")


def constant_solution(c=1.0):
    return ManufacturedSolution(lambda x: np.full(len(x), float(c)),
                                lambda x: np.zeros((len(x), 2)),
                                lambda x: np.zeros((len(x), 2, 2)), f"const{c:g}")


@dataclass(frozen=True)
class ProblemData:
    f: Callable
    g: Callable


def problem_from(sol: ManufacturedSolution, smap: Optional[SurfaceMap] = None):
    if smap is None:
        return ProblemData(sol.f, sol.u)
    return ProblemData(sol.surface_rhs(smap), sol.u)


@dataclass
class NitscheSystem:
    active: object
    dom: object
    A: sp.csr_matrix
    b: np.ndarray
    beta: float
    smap: SurfaceMap
    u_gamma: Optional[np.ndarray] = None
    u_full: Optional[np.ndarray] = None
    history: list = field(default_factory=list)

    @property
    def n_dofs(self):
        return self.A.shape[0]

    def reduced(self, E):
        return triple_product(E, self.A), E.T @ self.b


def _scatter(active, Ke, Fe):
    ed = active.elem_dofs
    n = ed.shape[1]
    rows = np.repeat(ed, n, axis=1).ravel()
    cols = np.tile(ed, (1, n)).ravel()
    A = coeff_matrix(rows, cols, Ke.ravel(), (active.n_dofs, active.n_dofs))
    b = np.bincount(ed.ravel(), weights=Fe.ravel(), minlength=active.n_dofs)
    return A, b


def assemble(active, dom, data: ProblemData, beta=None, smap: Optional[SurfaceMap] = None):
    """Nitsche stiffness matrix and load vector on the active spline space.

    Volume:   (sqrt|G| G^{-1} grad v, grad w)
    Boundary: - (sqrt|G| n.G^{-1} grad v, w) - (v, sqrt|G| n.G^{-1} grad w) + beta/h (sqrt|G| v, w)
    Load:     (sqrt|G| f, w) + (sqrt|G| g, beta/h w - n.G^{-1} grad w)
    """
    p, h = active.p, active.h
    beta = default_beta(p) if beta is None else float(beta)
    smap = identity_map() if smap is None else smap
    P = np.asarray(cardinal_pieces(p))

    vol = dom.volume_rule(active.elements)
    sg, Gi = smap.metric_data(vol.points)
    kq = sg[:, None, None] * Gi
    fq = sg * np.asarray(data.f(vol.points), dtype=float)
    Kv, Fv = _kernels.volume_local(vol.ptr, vol.local, vol.weights, kq, np.zeros_like(sg), fq, P, h)

    bnd = dom.boundary_rule(active.elements)
    sb, Gb = smap.metric_data(bnd.points)
    cq = sb[:, None] * np.einsum("nij,nj->ni", Gb, bnd.normals)
    gq = np.asarray(data.g(bnd.points), dtype=float)
    Kb, Fb = _kernels.boundary_local(bnd.ptr, bnd.local, bnd.weights, cq, sb, gq, beta / h, P, h)

    A, b = _scatter(active, Kv + Kb, Fv + Fb)
    return NitscheSystem(active, dom, A, b, beta, smap)


def solve_reduced(system: NitscheSystem, E, method="auto", tol=1e-12):
    """Solve (E^T A E) u_gamma = E^T b and expand u^E = E u_gamma."""
    Ar, br = system.reduced(E)
    n = Ar.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_SOLVE_LIMIT else "pcg"
    if method == "dense":
        # unstabilised systems trip LAPACK's rcond warning; the residual check below decides
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            u = dense_solve(Ar, br)
        hist = []
    elif method == "pcg":
        u, hist = pcg_solve(Ar, br, tol=tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    bn = np.linalg.norm(br)
    res = np.linalg.norm(br - Ar @ u) / (bn if bn > 0 else 1.0)
    hist = list(hist) + [res]
    if not np.isfinite(res) or res > 1e-10:
        raise SolverError(f"reduced residual {res:.3e} above 1e-10", hist)
    system.u_gamma = u
    system.u_full = E @ u
    system.history = hist
    return system.u_gamma, system.u_full


def evaluate(active, coef, rule):
    """Values and gradients of the spline with active-dof coefficients ``coef`` on a QuadRule."""
    C = np.asarray(coef, dtype=float)[active.elem_dofs]
    P = np.asarray(cardinal_pieces(active.p))
    return _kernels.eval_field(rule.ptr, rule.local, C, P, active.h)


def evaluate_points(active, coef, x):
    """Values and gradients at arbitrary points of the active elements (input order kept)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    e, loc = active.space.mesh.locate(x)
    pos = active.elem_index[e]
    if np.any(pos < 0):
        raise ValueError("point outside the active elements")
    order = np.argsort(pos, kind="stable")
    counts = np.bincount(pos, minlength=active.n_elements)
    ptr = np.concatenate([[0], np.cumsum(counts)])
    C = np.asarray(coef, dtype=float)[active.elem_dofs]
    P = np.asarray(cardinal_pieces(active.p))
    v, g = _kernels.eval_field(ptr, loc[order], C, P, active.h)
    val = np.empty_like(v)
    grad = np.empty_like(g)
    val[order] = v
    grad[order] = g
    return val, grad


def error_norms(active, dom, coef, sol: ManufacturedSolution, smap: Optional[SurfaceMap] = None):
    """(||u - u_h||_{L2(Omega)}, |u - u_h|_{H1(Omega)}) with the cut-cell rules.

    With a surface map the norms are taken on the reference domain (no metric).
    """
    rule = dom.volume_rule(active.elements)
    val, grad = evaluate(active, coef, rule)
    ev = sol.u(rule.points) - val
    eg = sol.grad(rule.points) - grad
    w = rule.weights
    return float(np.sqrt(np.sum(w * ev ** 2))), float(np.sqrt(np.sum(w * np.sum(eg ** 2, axis=1))))


def boundary_residual(active, dom, coef, g):
    """max |u_h - g| over the boundary quadrature points."""
    rule = dom.boundary_rule(active.elements)
    val, _ = evaluate(active, coef, rule)
    return float(np.max(np.abs(val - g(rule.points)))) if val.size else 0.0


def _weighted_gradient_matrix(active, rule, kq):
    P = np.asarray(cardinal_pieces(active.p))
    zeros = np.zeros(rule.weights.size)
    K, _ = _kernels.volume_local(rule.ptr, rule.local, rule.weights, kq, zeros, zeros, P, active.h)
    A, _ = _scatter(active, K, np.zeros((active.n_elements, active.space.n_local)))
    return A


def stiffness_matrix(active, dom):
    rule = dom.volume_rule(active.elements)
    kq = np.broadcast_to(np.eye(2), (rule.weights.size, 2, 2))
    return _weighted_gradient_matrix(active, rule, kq)


def normal_derivative_matrix(active, dom):
    """Sum_q w (n.grad phi_i)(n.grad phi_j) over the boundary rule."""
    rule = dom.boundary_rule(active.elements)
    kq = np.einsum("qa,qb->qab", rule.normals, rule.normals)
    return _weighted_gradient_matrix(active, rule, kq)


def boundary_band(active, dom, E):
    """Columns of E whose extended basis functions are nonzero on some cut element."""
    cut = dom.status[active.elements] == CUT
    rows = np.unique(active.elem_dofs[cut])
    return np.unique(sp.csr_matrix(E)[rows].nonzero()[1])


def inverse_inequality_ratio(active, dom, E=None, n_samples=50, rng=None, band=True, method="sample"):
    """max over v = E v^L of h ||n.grad v||^2_{dOmega} / ||grad v||^2_Omega.

    ``method="sample"`` maximises over ``n_samples`` random coefficient vectors.
    With ``band`` they live on the boundary band only; interior coefficients
    add volume energy without boundary flux, so the sampled ratio would decay
    like h.  ``method="eig"`` returns the exact maximum over the band
    (largest generalised eigenvalue, constants projected out).
    """
    K = stiffness_matrix(active, dom)
    N = normal_derivative_matrix(active, dom)
    if E is None:
        E = sp.identity(active.n_dofs, format="csr")
    if method == "eig":
        Eb = sp.csc_matrix(E)[:, boundary_band(active, dom, E)]
        Kb = (Eb.T @ K @ Eb).toarray()
        Nb = (Eb.T @ N @ Eb).toarray()
        mu, Q = scipy.linalg.eigh(Kb)
        keep = mu > 1e-13 * mu.max()
        S = Q[:, keep] / np.sqrt(mu[keep])
        return float(active.h * scipy.linalg.eigvalsh(S.T @ Nb @ S).max())
    if method != "sample":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(rng)
    C = rng.standard_normal((E.shape[1], n_samples))
    if band:
        mask = np.zeros(E.shape[1], dtype=bool)
        mask[boundary_band(active, dom, E)] = True
        C[~mask] = 0.0
    V = E @ C
    num = np.einsum("ij,ij->j", V, N @ V)
    den = np.einsum("ij,ij->j", V, K @ V)
    return float(active.h * np.max(num / den))


def reduced_matrix(system, E):
    return canonical(triple_product(E, system.A))
