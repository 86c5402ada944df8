#!/usr/bin/env python3
"""Times the hot kernels on the reference and compiled backends.

The likelihood kernel runs inside a derivative-free optimizer inside a
cohort loop, so its per-call cost dominates everything else. This script
reports best-of-N wall times for one 48 h closed-loop simulation, one
5-day injection simulation, and one likelihood evaluation, per backend,
plus the compiled-over-reference speedup.
"""

import argparse
import time

from autobasal import _kernels
from autobasal.cohort import VirtualPatient
from autobasal.estimate import neg_log_likelihood
from autobasal.model import POPULATION, daily_dose, dose_required
from autobasal.simulate import (
    ControllerConfig,
    SimGrid,
    run_closed_loop,
    run_injection_phase,
)


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="take the best of this many runs (default 5)")
    parser.add_argument("--hours", type=float, default=48.0,
                        help="closed-loop horizon in hours (default 48)")
    args = parser.parse_args(argv)

    patient = VirtualPatient(0, POPULATION, 90.0, 0.05, 0.16, 7)
    grid = SimGrid(horizon_min=args.hours * 60.0)
    dose = daily_dose(dose_required(POPULATION, 5.8))
    trace = run_closed_loop(patient, ControllerConfig(), grid)

    backends = ["reference"]
    if _kernels.have_compiled():
        backends.append("compiled")
    else:
        print("compiled extension not built; timing the reference backend only")

    workloads = {
        f"closed loop {args.hours:g} h": lambda b: run_closed_loop(
            patient, ControllerConfig(), grid, backend=b),
        "injection 5 d": lambda b: run_injection_phase(
            patient, dose.u_basal, 5, grid, backend=b),
        "likelihood eval": lambda b: neg_log_likelihood(
            POPULATION.theta, trace, POPULATION, 0.05, 0.16, backend=b),
    }

    times = {
        name: {b: best_of(lambda: fn(b), args.repeats) for b in backends}
        for name, fn in workloads.items()
    }

    width = max(len(name) for name in times)
    header = f"{'kernel':<{width}}  {'reference':>12}"
    if "compiled" in backends:
        header += f"  {'compiled':>12}  {'speedup':>8}"
    print(header)
    for name, t in times.items():
        row = f"{name:<{width}}  {t['reference'] * 1e3:>9.2f} ms"
        if "compiled" in backends:
            row += f"  {t['compiled'] * 1e3:>9.2f} ms  {t['reference'] / t['compiled']:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
