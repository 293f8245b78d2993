#!/usr/bin/env python3
"""Benchmark: compiled march kernel vs the pure-numpy twin.

Times the 1+1 leapfrog march (the hot loop behind the expansion-oracle and
refinement experiments) on the acceptance-scale grid for a linear, a cubic
and a full-Taylor solve.

    python benchmarks/bench_march.py [n]
"""

import sys
import time

import numpy as np

from nullwaves import solver, stepper
from nullwaves.grids import Grid, SourceSpec
from nullwaves.metrics import MetricSpec
from nullwaves.terms import TaylorNonlinearity


def timeit(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 512
    grid = Grid((n, n), 2.0, (6.0,))
    src = SourceSpec(center=(0.3, 3.0), widths=(0.18, 0.3), amplitude=1.0).to_field(grid)
    spec = MetricSpec.conformal_minkowski("0.1*exp(-(x1-3.0)**2/0.4)")
    cases = {
        "linear": None,
        "cubic": TaylorNonlinearity.from_dict({3: "1.0"}),
        "taylor(2..5)": TaylorNonlinearity.from_dict({k: "1.0" for k in range(2, 6)}),
    }
    print(f"grid {n}x{n}, metric {spec.name}")
    print(f"compiled extension available: {stepper.USING_COMPILED}")
    print(f"{'case':14s} {'compiled':>12s} {'pure numpy':>12s} {'speedup':>9s}")
    for name, H in cases.items():
        asm = solver.assemble(spec, None, H, grid)
        t_pure = timeit(lambda: asm.march(src.values, force_pure=True))
        if stepper.USING_COMPILED:
            t_comp = timeit(lambda: asm.march(src.values))
            a = asm.march(src.values)
            b = asm.march(src.values, force_pure=True)
            assert np.abs(a - b).max() < 1e-12 * max(1.0, np.abs(a).max())
            print(f"{name:14s} {t_comp*1e3:10.2f}ms {t_pure*1e3:10.2f}ms {t_pure/t_comp:8.1f}x")
        else:
            print(f"{name:14s} {'-':>12s} {t_pure*1e3:10.2f}ms {'-':>9s}")


if __name__ == "__main__":
    main()
