"""Element-level quadrature kernels.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature.  The numba path is used when numba imports and the
environment variable ``TRIMEXT_DISABLE_NUMBA`` is unset or ``0``; call
``set_backend`` to switch at runtime (benchmarks, cross-checks).

Common arguments:
    ptr     (ne+1,) int64   point ranges per element
    loc     (nq, 2)         reference coordinates in [0, 1]^2
    w       (nq,)           quadrature weights (physical)
    P       (p+1, p+1)      cardinal piece coefficients (mesh.cardinal_pieces)
    h                       mesh size
"""
import os
from contextlib import contextmanager

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_DISABLED = os.environ.get("TRIMEXT_DISABLE_NUMBA", "0") not in ("", "0", "false", "False")
BACKEND = "numba" if HAVE_NUMBA and not _DISABLED else "numpy"


def set_backend(name):
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(name)
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    BACKEND = name


@contextmanager
def backend(name):
    old = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)


# ---------------------------------------------------------------- numpy path

_CHUNK = 1 << 14


def _tensor_np(P, loc, h):
    n1 = P.shape[0]
    t = loc[:, 0]
    s = loc[:, 1]
    deg = np.arange(n1)
    Tt = t[:, None] ** deg
    Ts = s[:, None] ** deg
    dTt = np.zeros_like(Tt)
    dTs = np.zeros_like(Ts)
    dTt[:, 1:] = deg[1:] * t[:, None] ** (deg[1:] - 1)
    dTs[:, 1:] = deg[1:] * s[:, None] ** (deg[1:] - 1)
    X, dX = Tt @ P.T, dTt @ P.T
    Y, dY = Ts @ P.T, dTs @ P.T
    nq = loc.shape[0]
    phi = (Y[:, :, None] * X[:, None, :]).reshape(nq, -1)
    gx = (Y[:, :, None] * dX[:, None, :]).reshape(nq, -1) / h
    gy = (dY[:, :, None] * X[:, None, :]).reshape(nq, -1) / h
    return phi, np.stack([gx, gy], axis=-1)


def _element_chunks(ptr):
    ne = ptr.size - 1
    start = 0
    while start < ne:
        stop = start + 1
        while stop < ne and ptr[stop + 1] - ptr[start] <= _CHUNK:
            stop += 1
        yield start, stop
        start = stop


def _segment_sum(vals, ptr, e0, e1):
    base = ptr[e0]
    out = np.zeros((e1 - e0,) + vals.shape[1:])
    cnt = np.diff(ptr[e0:e1 + 1])
    nz = cnt > 0
    if vals.shape[0]:
        starts = (ptr[e0:e1] - base)[nz]
        out[nz] = np.add.reduceat(vals, starts, axis=0)
    return out


def volume_local_np(ptr, loc, w, kq, mq, fq, P, h):
    ne = ptr.size - 1
    n = P.shape[0] ** 2
    Ke = np.zeros((ne, n, n))
    Fe = np.zeros((ne, n))
    for e0, e1 in _element_chunks(ptr):
        a, b = ptr[e0], ptr[e1]
        phi, g = _tensor_np(P, loc[a:b], h)
        wk = w[a:b, None, None] * kq[a:b]
        kg = np.einsum("qab,qjb->qja", wk, g)
        vals = np.einsum("qia,qja->qij", g, kg)
        vals += (w[a:b] * mq[a:b])[:, None, None] * phi[:, :, None] * phi[:, None, :]
        Ke[e0:e1] = _segment_sum(vals, ptr, e0, e1)
        Fe[e0:e1] = _segment_sum((w[a:b] * fq[a:b])[:, None] * phi, ptr, e0, e1)
    return Ke, Fe


def boundary_local_np(ptr, loc, w, cq, sq, gq, pen, P, h):
    ne = ptr.size - 1
    n = P.shape[0] ** 2
    Ke = np.zeros((ne, n, n))
    Fe = np.zeros((ne, n))
    for e0, e1 in _element_chunks(ptr):
        a, b = ptr[e0], ptr[e1]
        phi, g = _tensor_np(P, loc[a:b], h)
        dn = np.einsum("qia,qa->qi", g, cq[a:b])
        ww = w[a:b]
        vals = (ww * pen * sq[a:b])[:, None, None] * phi[:, :, None] * phi[:, None, :]
        vals -= ww[:, None, None] * (phi[:, :, None] * dn[:, None, :] + dn[:, :, None] * phi[:, None, :])
        Ke[e0:e1] = _segment_sum(vals, ptr, e0, e1)
        rhs = (ww * gq[a:b])[:, None] * (pen * sq[a:b, None] * phi - dn)
        Fe[e0:e1] = _segment_sum(rhs, ptr, e0, e1)
    return Ke, Fe


def eval_field_np(ptr, loc, coef, P, h):
    nq = loc.shape[0]
    val = np.zeros(nq)
    grad = np.zeros((nq, 2))
    eop = np.repeat(np.arange(ptr.size - 1), np.diff(ptr))
    for e0, e1 in _element_chunks(ptr):
        a, b = ptr[e0], ptr[e1]
        phi, g = _tensor_np(P, loc[a:b], h)
        c = coef[eop[a:b]]
        val[a:b] = np.einsum("qi,qi->q", phi, c)
        grad[a:b] = np.einsum("qia,qi->qa", g, c)
    return val, grad


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _basis_nb(P, t, s, h, phi, gx, gy, X, dX, Y, dY):
        n1 = P.shape[0]
        for r in range(n1):
            v = 0.0
            dv = 0.0
            u = 0.0
            du = 0.0
            tk = 1.0
            sk = 1.0
            tkm = 0.0
            skm = 0.0
            for k in range(n1):
                v += P[r, k] * tk
                u += P[r, k] * sk
                dv += P[r, k] * k * tkm
                du += P[r, k] * k * skm
                tkm = tk
                skm = sk
                tk *= t
                sk *= s
            X[r] = v
            dX[r] = dv
            Y[r] = u
            dY[r] = du
        for q in range(n1):
            for r in range(n1):
                l = q * n1 + r
                phi[l] = Y[q] * X[r]
                gx[l] = Y[q] * dX[r] / h
                gy[l] = dY[q] * X[r] / h

    @njit(cache=True)
    def volume_local_nb(ptr, loc, w, kq, mq, fq, P, h):
        ne = ptr.size - 1
        n1 = P.shape[0]
        n = n1 * n1
        Ke = np.zeros((ne, n, n))
        Fe = np.zeros((ne, n))
        phi = np.empty(n)
        gx = np.empty(n)
        gy = np.empty(n)
        X = np.empty(n1)
        dX = np.empty(n1)
        Y = np.empty(n1)
        dY = np.empty(n1)
        for e in range(ne):
            for q in range(ptr[e], ptr[e + 1]):
                _basis_nb(P, loc[q, 0], loc[q, 1], h, phi, gx, gy, X, dX, Y, dY)
                wq = w[q]
                k00 = wq * kq[q, 0, 0]
                k01 = wq * kq[q, 0, 1]
                k10 = wq * kq[q, 1, 0]
                k11 = wq * kq[q, 1, 1]
                m = wq * mq[q]
                f = wq * fq[q]
                for j in range(n):
                    ax = k00 * gx[j] + k01 * gy[j]
                    ay = k10 * gx[j] + k11 * gy[j]
                    mj = m * phi[j]
                    for i in range(n):
                        Ke[e, i, j] += gx[i] * ax + gy[i] * ay + phi[i] * mj
                    Fe[e, j] += f * phi[j]
        return Ke, Fe

    @njit(cache=True)
    def boundary_local_nb(ptr, loc, w, cq, sq, gq, pen, P, h):
        ne = ptr.size - 1
        n1 = P.shape[0]
        n = n1 * n1
        Ke = np.zeros((ne, n, n))
        Fe = np.zeros((ne, n))
        phi = np.empty(n)
        gx = np.empty(n)
        gy = np.empty(n)
        dn = np.empty(n)
        X = np.empty(n1)
        dX = np.empty(n1)
        Y = np.empty(n1)
        dY = np.empty(n1)
        for e in range(ne):
            for q in range(ptr[e], ptr[e + 1]):
                _basis_nb(P, loc[q, 0], loc[q, 1], h, phi, gx, gy, X, dX, Y, dY)
                wq = w[q]
                for i in range(n):
                    dn[i] = gx[i] * cq[q, 0] + gy[i] * cq[q, 1]
                ps = wq * pen * sq[q]
                for j in range(n):
                    for i in range(n):
                        Ke[e, i, j] += ps * phi[i] * phi[j] - wq * (phi[i] * dn[j] + dn[i] * phi[j])
                    Fe[e, j] += wq * gq[q] * (pen * sq[q] * phi[j] - dn[j])
        return Ke, Fe

    @njit(cache=True)
    def eval_field_nb(ptr, loc, coef, P, h):
        nq = loc.shape[0]
        n1 = P.shape[0]
        n = n1 * n1
        val = np.zeros(nq)
        grad = np.zeros((nq, 2))
        phi = np.empty(n)
        gx = np.empty(n)
        gy = np.empty(n)
        X = np.empty(n1)
        dX = np.empty(n1)
        Y = np.empty(n1)
        dY = np.empty(n1)
        for e in range(ptr.size - 1):
            for q in range(ptr[e], ptr[e + 1]):
                _basis_nb(P, loc[q, 0], loc[q, 1], h, phi, gx, gy, X, dX, Y, dY)
                v = 0.0
                a = 0.0
                b = 0.0
                for i in range(n):
                    c = coef[e, i]
                    v += c * phi[i]
                    a += c * gx[i]
                    b += c * gy[i]
                val[q] = v
                grad[q, 0] = a
                grad[q, 1] = b
        return val, grad


def _prep(ptr, loc, *arrays):
    out = [np.ascontiguousarray(ptr, dtype=np.int64), np.ascontiguousarray(loc, dtype=np.float64)]
    out += [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]
    return out


def volume_local(ptr, loc, w, kq, mq, fq, P, h):
    """Local matrices sum_q w (grad phi_i . K grad phi_j + m phi_i phi_j) and loads sum_q w f phi_i."""
    args = _prep(ptr, loc, w, kq, mq, fq, P)
    if BACKEND == "numba":
        return volume_local_nb(*args, float(h))
    return volume_local_np(*args, float(h))


def boundary_local(ptr, loc, w, cq, sq, gq, pen, P, h):
    """Nitsche boundary terms with conormal ``cq`` and area factor ``sq``:

    K_ij = sum_q w [pen sq phi_i phi_j - (c.grad phi_j) phi_i - phi_j (c.grad phi_i)]
    F_i  = sum_q w g [pen sq phi_i - c.grad phi_i]
    """
    ptr, loc, w, cq, sq, gq, P = _prep(ptr, loc, w, cq, sq, gq, P)
    if BACKEND == "numba":
        return boundary_local_nb(ptr, loc, w, cq, sq, gq, float(pen), P, float(h))
    return boundary_local_np(ptr, loc, w, cq, sq, gq, float(pen), P, float(h))


def eval_field(ptr, loc, coef, P, h):
    """Values and gradients of elementwise expansions ``coef`` (ne, n) at the points."""
    args = _prep(ptr, loc, coef, P)
    if BACKEND == "numba":
        return eval_field_nb(*args, float(h))
    return eval_field_np(*args, float(h))
