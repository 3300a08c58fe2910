"""Gauss rules on the unit interval, the unit square and triangles."""
from functools import lru_cache

import numpy as np


def npoints_for_degree(degree):
    """Number of Gauss-Legendre points integrating polynomials of `degree` exactly."""
    return max(1, (int(degree) + 2) // 2)


@lru_cache(maxsize=None)
def gauss_01(n):
    """n-point Gauss-Legendre rule on [0, 1] as (points, weights)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def tensor_gauss_01(n):
    """Tensor n x n Gauss rule on [0,1]^2; points ordered with x fastest."""
    x, w = gauss_01(n)
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    wts = W.ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@lru_cache(maxsize=None)
def collapsed_triangle_rule(degree):
    """Collapsed (Duffy) tensor Gauss rule on the reference triangle (0,0),(1,0),(0,1).

    Exact for total degree `degree`. All points are interior, all weights positive.
    """
    n = npoints_for_degree(degree + 1)
    x, w = gauss_01(n)
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wx, wy = np.meshgrid(w, w, indexing="ij")
    a = xi.ravel()
    b = eta.ravel()
    pts = np.column_stack([a, b * (1.0 - a)])
    wts = (wx * wy).ravel() * (1.0 - a)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def triangle_rule(tri, degree):
    """Map the reference triangle rule onto triangles.

    tri : (m, 3, 2) vertex array (any orientation).
    Returns points (m*nq, 2) and positive weights (m*nq,).
    """
    tri = np.asarray(tri, dtype=float).reshape(-1, 3, 2)
    ref, w = collapsed_triangle_rule(degree)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    jac = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = (tri[:, None, 0, :] + ref[None, :, 0, None] * e1[:, None, :]
           + ref[None, :, 1, None] * e2[:, None, :])
    wts = jac[:, None] * w[None, :]
    return pts.reshape(-1, 2), wts.ravel()
