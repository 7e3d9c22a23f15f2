#!/usr/bin/env python3
"""Compare the numba and numpy kernel backends.

Spawns one subprocess per backend (the backend is fixed at import time by
IQNLAB_BACKEND), times the hot kernels and a full solver loop, and prints a
side-by-side table.

Usage:
    python benchmarks/bench_backends.py [--d 80] [--n 50] [--steps 2000]
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

_WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    from iqnlab import matkernel as mk
    from iqnlab._backend import BACKEND
    from iqnlab.data import GeneratorSpec, generate_quadratic, initial_point
    from iqnlab.objectives import QuadraticObjective
    from iqnlab.solvers import SolverConfig, make_solver

    d, n, steps, reps = json.loads(sys.argv[1])
    rng = np.random.default_rng(0)

    a_inv = np.linalg.inv(np.diag(rng.uniform(1.0, 3.0, d)) + 0.05 * np.eye(d))
    u = rng.standard_normal(d)
    v = rng.standard_normal(d)
    b = np.diag(rng.uniform(1.0, 3.0, d)) + 0.0
    k = np.diag(rng.uniform(1.0, 3.0, d)) + 0.0
    w = rng.standard_normal(d)
    ku, uku = k @ w, float(w @ k @ w)

    # warm up (numba compilation happens here)
    mk.sm_inverse_update(a_inv, u, v)
    mk.bfgs_update(b, ku, uku, w)
    mk.dfp_update(b, ku, uku, w)

    timings = {}
    start = time.perf_counter()
    for _ in range(reps):
        mk.sm_inverse_update(a_inv, u, v)
    timings["sm_inverse_update"] = (time.perf_counter() - start) / reps

    start = time.perf_counter()
    for _ in range(reps):
        mk.bfgs_update(b, ku, uku, w)
    timings["bfgs_update"] = (time.perf_counter() - start) / reps

    start = time.perf_counter()
    for _ in range(reps):
        mk.dfp_update(b, ku, uku, w)
    timings["dfp_update"] = (time.perf_counter() - start) / reps

    quad = QuadraticObjective(generate_quadratic(
        GeneratorSpec(n=n, d=d if d % 2 == 0 else d + 1, xi=1.0, seed=1)))
    solver = make_solver(quad, initial_point(quad.d, 1.0, 2),
                         SolverConfig(method="SLIQN", gstop=1e-300, max_epochs=10**9))
    solver.step()  # warm
    start = time.perf_counter()
    for _ in range(steps):
        solver.step()
    timings["sliqn_step"] = (time.perf_counter() - start) / steps

    json.dump({"backend": BACKEND, "timings": timings}, sys.stdout)
""")


def measure(backend, d, n, steps, reps):
    env = dict(os.environ, IQNLAB_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", _WORKER,
                          json.dumps([d, n, steps, reps])],
                         env=env, capture_output=True, text=True)
    if out.returncode != 0:
        raise RuntimeError(f"{backend} worker failed:\n{out.stderr}")
    return json.loads(out.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--d", type=int, default=80)
    parser.add_argument("--n", type=int, default=50)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--reps", type=int, default=5000)
    args = parser.parse_args()

    results = {}
    for backend in ("numpy", "numba"):
        try:
            results[backend] = measure(backend, args.d, args.n, args.steps, args.reps)
        except RuntimeError as exc:
            print(f"skipping {backend}: {exc}", file=sys.stderr)

    if not results:
        return 1
    names = list(next(iter(results.values()))["timings"])
    print(f"d={args.d} n={args.n} steps={args.steps} reps={args.reps}")
    header = f"{'kernel':24s}" + "".join(f"{b:>14s}" for b in results)
    if len(results) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for name in names:
        row = f"{name:24s}"
        values = []
        for backend in results:
            t = results[backend]["timings"][name]
            values.append(t)
            row += f"{t * 1e6:12.2f}us"
        if len(values) == 2:
            row += f"{values[0] / values[1]:9.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
