"""Numba against numpy for the hot kernels, plus one end-to-end closed-loop run.

    python benchmarks/bench_kernels.py [--repeat 5] [--no-e2e]

Kernel timings call the ``*_nb`` and ``*_np`` forms directly, after a warm-up
call so JIT compilation is excluded.  The end-to-end timing runs a scenario in
a fresh interpreter per backend, switched with ECOHEAT_DISABLE_NUMBA.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ecoheat import kernels
from ecoheat._accel import HAVE_NUMBA


def cases(rng):
    grid = np.linspace(18.0, 24.0, 25)
    t_ain = 1.08 * grid + 0.05 * (grid - 15.0) * 80.0 - 0.027 * grid ** 2 + 2.1
    desired = rng.uniform(500.0, 4000.0, 31)
    p_states = rng.uniform(0.0, 4000.0, 25 * 25)
    target = np.abs(np.cumsum(rng.normal(0.0, 0.5, 5000)))
    eps = rng.standard_normal(5000)
    return {
        "grid_solve (31 steps x 25 setpoints)":
            ("grid_solve", (desired, t_ain, -11.0, 1005.0, 0.02, 0.15)),
        "dp_first_step (31 steps x 625 states)":
            ("dp_first_step", (p_states, desired, 2000.0, 1e-4)),
        "driver_filter (5000 samples)":
            ("driver_filter", (target, eps, np.exp(-1.0), 0.9, 1.1, 1.0)),
        "pace_arrival (1 km)":
            ("pace_arrival", (3.0, 15.0, 1.5, 2.5, 1000.0, 1.0)),
    }


E2E = ("import time; from ecoheat import harness, config;"
       "cfg = config.load_default(); s = cfg.scenario('eco_eco');"
       "harness.run_scenario(s, cfg.setup); t = time.perf_counter();"
       "harness.run_scenario(harness.Scenario(seed=1), cfg.setup);"
       "print(time.perf_counter() - t)")


def e2e(disable):
    env = dict(os.environ, ECOHEAT_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", E2E], env=env, check=True,
                         capture_output=True, text=True).stdout
    return float(out.split()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-e2e", action="store_true")
    args = ap.parse_args()
    if not HAVE_NUMBA:
        sys.exit("numba is not installed")

    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numba [us]':>12s} {'numpy [us]':>12s} {'ratio':>8s}")
    for label, (name, a) in cases(rng).items():
        fn_nb = getattr(kernels, name + "_nb")
        fn_np = getattr(kernels, name + "_np")
        fn_nb(*a)  # compile
        res = []
        for fn in (fn_nb, fn_np):
            t = timeit.Timer(lambda: fn(*a))
            n, _ = t.autorange()
            res.append(min(t.repeat(args.repeat, n)) / n * 1e6)
        print(f"{label:40s} {res[0]:12.1f} {res[1]:12.1f} {res[1] / res[0]:8.2f}")

    if not args.no_e2e:
        nb, npy = e2e(False), e2e(True)
        print(f"{'run_scenario, eco/eco, one run [s]':40s} {nb:12.3f} {npy:12.3f} {npy / nb:8.2f}")


if __name__ == "__main__":
    main()
