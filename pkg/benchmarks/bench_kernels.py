"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--quick]

Each case runs through the public API with the backend switched in place,
and the two backends' results are checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from condot import _backend
from condot.darcy import DarcyProblem, solve_darcy
from condot.grf import GaussianPrior, Grid2D
from condot.ot_core import solve_assignment, solve_assignment_points


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(quick):
    rng = np.random.default_rng(0)
    n_dense = 150 if quick else 400
    c = rng.random((n_dense, n_dense))
    yield f"dense assignment n={n_dense}", lambda: solve_assignment(c, lex_tiebreak=False)[1]

    n_pts = 2000 if quick else 10000
    Y = rng.uniform(-1, 1, (n_pts, 1))
    za, va = Y, rng.standard_normal((n_pts, 1))
    yb, ub = Y[rng.permutation(n_pts)], rng.standard_normal((n_pts, 1))
    yield (f"sparse assignment + pricing J={n_pts}",
           lambda: solve_assignment_points(za, va, yb, ub, 5e-3, k=16)[1])

    grid = 32 if quick else 64
    prob = DarcyProblem(Grid2D(grid, grid))
    fields = GaussianPrior(Grid2D(grid, grid), 0.5).sample(np.random.default_rng(1), 5)
    yield (f"darcy solve {grid}x{grid} x5",
           lambda: float(sum(solve_darcy(prob, u).sum() for u in fields)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    initial = _backend.BACKEND
    print(f"{'case':<40} {'compiled [s]':>13} {'python [s]':>11} {'speedup':>8}")
    try:
        for name, fn in cases(args.quick):
            _backend.use("compiled")
            tc, rc = best_of(fn, args.repeat)
            _backend.use("python")
            tp, rp = best_of(fn, 1 if not args.quick else args.repeat)
            agree = np.isclose(rc, rp, rtol=1e-10, atol=1e-12)
            print(f"{name:<40} {tc:>13.4f} {tp:>11.4f} {tp / tc:>7.1f}x{'' if agree else '  MISMATCH'}")
    finally:
        _backend.use(initial)


if __name__ == "__main__":
    main()
