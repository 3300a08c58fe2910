"""Time the numba and numpy kernel backends on one assembled bean problem.

    python benchmarks/bench_kernels.py --p 2 --h 0.03125 --repeat 5
"""
import argparse
import time

import numpy as np

from trimext import _kernels
from trimext.geometry import bean_domain
from trimext.mesh import cardinal_pieces
from trimext.nitsche import assemble, bean_solution, problem_from
from trimext.study import build_case


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--p", type=int, default=2)
    ap.add_argument("--h", type=float, default=1 / 32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    _, dom, active = build_case(bean_domain(), args.p, args.h, (0.3 * args.h, 0.6 * args.h), 2 * args.p + 2)
    rule = dom.volume_rule(active.elements)
    nq = rule.weights.size
    P = np.asarray(cardinal_pieces(args.p))
    kq = np.broadcast_to(np.eye(2), (nq, 2, 2)).copy()
    mq = np.zeros(nq)
    fq = np.ones(nq)
    coef = np.random.default_rng(0).standard_normal((active.n_elements, active.space.n_local))
    data = problem_from(bean_solution())
    print(f"p={args.p} h={args.h:g}: {active.n_elements} elements, {active.n_dofs} dofs, {nq} volume points")

    results = {}
    for name in ("numpy", "numba"):
        with _kernels.backend(name):
            _kernels.volume_local(rule.ptr, rule.local, rule.weights, kq, mq, fq, P, active.h)  # warm-up / JIT
            tv, (K, _) = best_of(lambda: _kernels.volume_local(rule.ptr, rule.local, rule.weights,
                                                               kq, mq, fq, P, active.h), args.repeat)
            te, (val, _) = best_of(lambda: _kernels.eval_field(rule.ptr, rule.local, coef, P, active.h),
                                   args.repeat)
            ta, sys_ = best_of(lambda: assemble(active, dom, data), args.repeat)
        results[name] = (K, val, sys_.A)
        print(f"{name:6s} volume_local {tv * 1e3:8.2f} ms  eval_field {te * 1e3:8.2f} ms  "
              f"full assembly {ta * 1e3:8.2f} ms")
    dK = np.abs(results["numpy"][0] - results["numba"][0]).max()
    dv = np.abs(results["numpy"][1] - results["numba"][1]).max()
    dA = abs(results["numpy"][2] - results["numba"][2]).max()
    print(f"max backend difference: local matrices {dK:.2e}, field values {dv:.2e}, global matrix {dA:.2e}")


if __name__ == "__main__":
    main()
