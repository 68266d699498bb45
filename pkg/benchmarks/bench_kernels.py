"""Compare the compiled and pure-Python kernel backends.

Run ``python benchmarks/bench_kernels.py`` after an editable install. Each
case is timed on both backends and the results are checked to agree.
"""

import argparse
import time

import numpy as np

from tribody import fixtures, kernels


def _arrays(state):
    return (np.array(state.positions, dtype=float),
            np.array(state.velocities, dtype=float),
            np.array(state.masses, dtype=float))


def case_leapfrog(k, n):
    q, v, m = _arrays(fixtures.figure8())
    k.leapfrog(q, v, m, 1e-3, n, 1e-12)
    return q


def case_rk4(k, n):
    q, v, m = _arrays(fixtures.figure8())
    k.rk4(q, v, m, 1e-3, n, 1e-12)
    return q


def case_bulirsch_stoer(k, n):
    q, v, m = _arrays(fixtures.figure8())
    k.bs_advance(q, v, m, n * 1e-3, 1e-2, 1e-12, 1e-12, 1e-14, 10**7)
    return q


CASES = {"leapfrog": case_leapfrog, "rk4": case_rk4, "bulirsch_stoer": case_bulirsch_stoer}


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000, help="steps (or 1e-3 time units) per case")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    compiled = kernels.get_backend("cython")
    pure = kernels.get_backend("python")
    print(f"{'case':<16}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}{'max |dq|':>12}")
    for name, case in CASES.items():
        tc, qc = best_of(lambda: case(compiled, args.steps), args.repeat)
        tp, qp = best_of(lambda: case(pure, args.steps), args.repeat)
        print(f"{name:<16}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}{np.max(np.abs(qc - qp)):>12.2e}")


if __name__ == "__main__":
    main()
