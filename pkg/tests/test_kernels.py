import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import bean_case
from trimext import _kernels
from trimext.mesh import cardinal_pieces, local_basis
from trimext.nitsche import assemble, bean_solution, evaluate, problem_from

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


def random_inputs(rng, p, ne=5, per=7, h=0.1):
    ptr = np.arange(ne + 1) * per
    nq = ne * per
    loc = rng.uniform(size=(nq, 2))
    w = rng.uniform(0.1, 1.0, nq)
    A = rng.standard_normal((nq, 2, 2))
    kq = A @ A.transpose(0, 2, 1)
    return ptr, loc, w, kq, rng.uniform(size=nq), rng.standard_normal(nq), np.asarray(cardinal_pieces(p)), h


@pytest.mark.parametrize("p", [1, 2, 3])
def test_numpy_volume_against_local_basis(p, rng):
    ptr, loc, w, kq, mq, fq, P, h = random_inputs(rng, p)
    with _kernels.backend("numpy"):
        K, F = _kernels.volume_local(ptr, loc, w, kq, mq, fq, P, h)
    for e in range(len(ptr) - 1):
        s = slice(ptr[e], ptr[e + 1])
        t, u = loc[s, 0], loc[s, 1]
        phi = local_basis(p, t, u, 0, 0)
        g = np.stack([local_basis(p, t, u, 1, 0), local_basis(p, t, u, 0, 1)], axis=-1) / h
        ref = np.einsum("q,qia,qab,qjb->ij", w[s], g, kq[s], g) + np.einsum("q,qi,qj->ij", w[s] * mq[s], phi, phi)
        np.testing.assert_allclose(K[e], ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(F[e], phi.T @ (w[s] * fq[s]), rtol=1e-12, atol=1e-12)


@needs_numba
@pytest.mark.parametrize("p", [1, 2, 3])
def test_backends_agree(p, rng):
    ptr, loc, w, kq, mq, fq, P, h = random_inputs(rng, p)
    cq = rng.standard_normal((len(w), 2))
    coef = rng.standard_normal((len(ptr) - 1, (p + 1) ** 2))
    out = {}
    for name in ("numpy", "numba"):
        with _kernels.backend(name):
            out[name] = (_kernels.volume_local(ptr, loc, w, kq, mq, fq, P, h)
                         + _kernels.boundary_local(ptr, loc, w, cq, mq, fq, 7.0, P, h)
                         + _kernels.eval_field(ptr, loc, coef, P, h))
    for a, b in zip(out["numpy"], out["numba"]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_numba
def test_backends_agree_on_assembly():
    _, dom, active = bean_case(2, 1 / 8)
    data = problem_from(bean_solution())
    with _kernels.backend("numpy"):
        a = assemble(active, dom, data)
        va, _ = evaluate(active, a.b, dom.volume_rule(active.elements))
    with _kernels.backend("numba"):
        b = assemble(active, dom, data)
        vb, _ = evaluate(active, b.b, dom.volume_rule(active.elements))
    assert abs(a.A - b.A).max() < 1e-12 * abs(a.A).max()
    np.testing.assert_allclose(a.b, b.b, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(va, vb, rtol=1e-12, atol=1e-14)


def test_backend_switch_and_errors():
    old = _kernels.BACKEND
    with _kernels.backend("numpy"):
        assert _kernels.BACKEND == "numpy"
    assert _kernels.BACKEND == old
    with pytest.raises(ValueError):
        _kernels.set_backend("cuda")


def test_env_flag_disables_numba():
    code = "from trimext import _kernels; print(_kernels.BACKEND)"
    env = dict(os.environ, TRIMEXT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["TRIMEXT_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == ("numba" if _kernels.HAVE_NUMBA else "numpy")
