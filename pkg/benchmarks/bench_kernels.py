"""Compare the compiled and pure-Python sparse coding kernels.

Times batch OMP and DSC on random data with each backend and checks that
both give the same codes.

    python benchmarks/bench_kernels.py [--n 2000] [--d 64] [--k 256] [--t 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ddl import _backend
from ddl.dsc import DscProblem, dsc_solve
from ddl.sparse_coding import batch_encode


def _best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="signals to encode")
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--k", type=int, default=256)
    ap.add_argument("--t", type=int, default=5)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--dsc-n", type=int, default=200, help="DSC problems to solve")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    D = rng.standard_normal((args.d, args.k))
    D /= np.linalg.norm(D, axis=0)
    Y = rng.standard_normal((args.d, args.n))
    W = rng.standard_normal((args.k, args.classes))
    b = rng.standard_normal(args.classes)
    gamma = rng.uniform(0.5, 2.0, args.classes)
    gram = D.T @ D

    backends = [name for name in ("cython", "python") if name in _backend.BACKENDS]
    results = {}
    for name in backends:
        t_omp, codes = _best_of(
            lambda: batch_encode(D, Y, args.t, gram=gram, backend=name), args.repeat)

        def run_dsc():
            out = []
            for i in range(args.dsc_n):
                lab = -np.ones(args.classes)
                lab[i % args.classes] = 1.0
                prob = DscProblem.from_labels(D, Y[:, i], W, b, lab, gamma, "logistic",
                                              args.t, gram=gram)
                out.append(dsc_solve(prob, backend=name))
            return out

        t_dsc, dsc_codes = _best_of(run_dsc, args.repeat)
        results[name] = (t_omp, t_dsc, codes, dsc_codes)
        print(f"{name:>7}: batch OMP {args.n} signals {1e3 * t_omp:9.1f} ms "
              f"({1e6 * t_omp / args.n:7.1f} us/signal);  "
              f"DSC {args.dsc_n} problems {1e3 * t_dsc:9.1f} ms")

    if len(results) == 2:
        c, p = results["cython"], results["python"]
        same_omp = all(np.array_equal(a.indices, b.indices) and np.allclose(a.values, b.values)
                       for a, b in zip(c[2], p[2]))
        same_dsc = all(np.array_equal(a.indices, b.indices) and np.allclose(a.values, b.values)
                       for a, b in zip(c[3], p[3]))
        print(f"speedup: batch OMP x{p[0] / c[0]:.1f}, DSC x{p[1] / c[1]:.1f}; "
              f"codes agree: OMP {same_omp}, DSC {same_dsc}")
    else:
        print("compiled backend not available; only the Python kernel was timed")


if __name__ == "__main__":
    main()
