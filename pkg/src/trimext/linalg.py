"""Sparse/dense linear algebra used by the extension and the solver.

Sparse storage is scipy CSR in canonical form (sorted, duplicate-free column
indices, no stored zeros).
"""
import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

DENSE_CAP = 8000


class SolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = [] if history is None else list(history)


def coeff_matrix(rows, cols, vals, shape):
    """Assemble triplets (duplicates summed) into canonical CSR."""
    A = sp.coo_matrix((np.asarray(vals, dtype=float).ravel(),
                       (np.asarray(rows).ravel(), np.asarray(cols).ravel())), shape=shape)
    return canonical(A)


def canonical(A):
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def triple_product(E, A):
    """E^T A E as canonical CSR."""
    E = sp.csr_matrix(E)
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1] or A.shape[1] != E.shape[0]:
        raise ValueError(f"dimension mismatch: E {E.shape}, A {A.shape}")
    return canonical(E.T @ (A @ E))


def is_symmetric(A, rtol=1e-12):
    A = sp.csr_matrix(A)
    D = A - A.T
    scale = abs(A).max() if A.nnz else 1.0
    return (abs(D).max() if D.nnz else 0.0) <= rtol * scale


def diagonal_scaling(A):
    """D^{-1/2} A D^{-1/2} with D = |diag(A)|.

    The absolute value keeps the scaling defined for the indefinite matrices
    that unstabilised cut discretisations can produce.
    """
    d = np.abs(np.asarray(A.diagonal(), dtype=float))
    if np.any(d == 0):
        raise ValueError("diagonal scaling needs a nonzero diagonal")
    s = 1.0 / np.sqrt(d)
    if sp.issparse(A):
        return canonical(sp.diags(s) @ A @ sp.diags(s))
    return A * s[:, None] * s[None, :]


def condition_number(A, precondition="none", cap=DENSE_CAP):
    """Spectral condition number of a symmetric matrix via dense eigenvalues.

    ``precondition="diagonal"`` evaluates D^{-1/2} A D^{-1/2}.
    """
    n = A.shape[0]
    if n > cap:
        raise ValueError(f"matrix of size {n} exceeds the dense cap {cap}")
    if precondition == "diagonal":
        A = diagonal_scaling(A)
    elif precondition != "none":
        raise ValueError(f"unknown preconditioner {precondition!r}")
    M = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    lam = np.abs(scipy.linalg.eigvalsh(M, check_finite=False))
    lo = lam.min()
    return np.inf if lo == 0 else float(lam.max() / lo)


def pcg_solve(A, b, M=None, tol=1e-12, maxiter=None, x0=None):
    """Preconditioned conjugate gradients with a diagonal preconditioner.

    ``M`` is the diagonal (array) of the preconditioner, defaulting to diag(A).
    Returns (x, residual_history).  Raises SolverError on non-convergence.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if M is None:
        M = np.asarray(A.diagonal(), dtype=float)
    Minv = 1.0 / np.asarray(M, dtype=float)
    maxiter = maxiter or 10 * n + 100
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), [0.0]
    hist = [np.linalg.norm(r) / bnorm]
    if hist[-1] <= tol:
        return x, hist
    z = Minv * r
    d = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Ad = A @ d
        dAd = d @ Ad
        if dAd <= 0:
            raise SolverError("matrix is not positive definite", hist)
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        hist.append(np.linalg.norm(r) / bnorm)
        if hist[-1] <= tol:
            return x, hist
        z = Minv * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverError(f"PCG did not reach {tol:g} in {maxiter} iterations", hist)


def dense_solve(A, b):
    """Direct symmetric solve (LDL^T, valid for indefinite matrices)."""
    M = A.toarray() if sp.issparse(A) else np.asarray(A)
    return scipy.linalg.solve(M, b, assume_a="sym", check_finite=False)


def write_matrix_market(path, A, comment=""):
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)
