"""Benchmark the violation-counting kernel: jitted loop vs numpy blocks.

Times full evaluate() calls on the bundled 24-bus case so the numbers
reflect what the tuner actually pays per bisection iteration. The two
backends must agree bit for bit; the benchmark asserts that before it
prints anything.

Usage: python3 benchmarks/bench_violation.py [--samples N] [--repeats K]
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np

from cctuner import apply_rts_modifications, load_rts_case
from cctuner._kernels import NO_NUMBA_ENV, active_backend, numba_available
from cctuner.ptdf import compute_ptdf
from cctuner.reformulation import build_catalog, participation_factors, solve_dispatch
from cctuner.uncertainty import gaussian_from_std_corr, sample, spec_moments
from cctuner.violation import evaluate


def time_backend(p_g, samples, catalog, repeats: int) -> tuple[float, object]:
    evaluate(p_g, samples, catalog)  # warm-up: JIT compile, page in
    best = float("inf")
    report = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        report = evaluate(p_g, samples, catalog)
        best = min(best, time.perf_counter() - t0)
    return best, report


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=100_000)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    case = apply_rts_modifications(load_rts_case())
    spec = gaussian_from_std_corr([9.4, 13.1], 0.2)
    catalog = build_catalog(
        case, compute_ptdf(case), participation_factors(case), spec_moments(spec, case)
    )
    p_g = solve_dispatch(case, catalog, 1.3012).p_g
    xi = sample(spec, args.samples, seed=args.seed, case=case)

    os.environ[NO_NUMBA_ENV] = "1"
    assert active_backend() == "numpy"
    t_numpy, r_numpy = time_backend(p_g, xi, catalog, args.repeats)
    del os.environ[NO_NUMBA_ENV]

    rows = len(catalog)
    cells = args.samples * rows
    print(f"case: {case.n_buses} buses, {rows} constraint rows, {args.samples} samples")
    print(f"numpy blocks : {t_numpy * 1e3:8.2f} ms  ({cells / t_numpy / 1e6:7.1f} M cells/s)")

    if numba_available():
        assert active_backend() == "numba"
        t_numba, r_numba = time_backend(p_g, xi, catalog, args.repeats)
        same = np.array_equal(r_numba.counts, r_numpy.counts) and (
            r_numba.joint_count == r_numpy.joint_count
        )
        assert same, "backends disagree; benchmark aborted"
        print(f"numba loop   : {t_numba * 1e3:8.2f} ms  ({cells / t_numba / 1e6:7.1f} M cells/s)")
        print(f"speedup      : {t_numpy / t_numba:8.2f}x  (counts bit-identical)")
    else:
        print("numba loop   : unavailable in this environment")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
