"""Compare the numba and NumPy kernels on a batch of noisy scenario draws.

Usage::

    python3 benchmarks/bench_backends.py [--samples N] [--repeats K]

The first numba call compiles (or loads the on-disk cache); it is timed
separately and excluded from the steady-state figures.
"""

import argparse
import time

import numpy as np

from tlspose import kernels, model
from tlspose.montecarlo import sample_stream


def make_batch(n_samples, seed=0):
    tpl = model.scenario_instance()
    L = np.array([np.linalg.cholesky(nm.matrix) for nm in tpl.noises])
    z = np.stack([sample_stream(seed, k).standard_normal((tpl.n, 6)) for k in range(n_samples)])
    x = np.einsum("nij,knj->kni", L, z)
    r = tpl.r_tilde + x[..., :3]
    b = tpl.b_tilde + x[..., 3:]
    A0 = np.broadcast_to(np.eye(3), (n_samples, 3, 3)).copy()
    return tpl, r, b, A0


def run_once(tpl, r, b, A0):
    t0 = time.perf_counter()
    sol = kernels.solve_batch(r, b, tpl.R_r, tpl.R_b, tpl.R_rb, A0)
    t1 = time.perf_counter()
    an = kernels.analyze_batch(sol.attitude, sol.translation, r, b, tpl.R_r, tpl.R_b, tpl.R_rb)
    t2 = time.perf_counter()
    return sol, an, t1 - t0, t2 - t1


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    tpl, r, b, A0 = make_batch(args.samples)
    backends = ["numpy"] + (["numba"] if kernels.NUMBA_AVAILABLE else [])
    results = {}
    print(f"{args.samples} samples, best of {args.repeats}")
    print(f"{'backend':8s} {'first call':>11s} {'solve':>9s} {'analyze':>9s} {'per sample':>11s}")
    for name in backends:
        with kernels.use_backend(name):
            t0 = time.perf_counter()
            run_once(tpl, r[:2], b[:2], A0[:2])
            first = time.perf_counter() - t0
            best_s = best_a = np.inf
            for _ in range(args.repeats):
                sol, an, ts, ta = run_once(tpl, r, b, A0)
                best_s, best_a = min(best_s, ts), min(best_a, ta)
        results[name] = (sol, an)
        per = (best_s + best_a) / args.samples * 1e6
        print(f"{name:8s} {first:10.3f}s {best_s:8.3f}s {best_a:8.3f}s {per:9.1f}us")

    if len(results) == 2:
        (s1, a1), (s2, a2) = results["numpy"], results["numba"]
        print(f"max |attitude diff| {np.abs(s1.attitude - s2.attitude).max():.2e}, "
              f"max rel P_f diff {np.max(np.abs(a1.P_f - a2.P_f)) / np.abs(a1.P_f).max():.2e}, "
              f"status agree: {bool(np.array_equal(s1.status, s2.status))}")
    else:
        print("numba not installed; only the NumPy backend was timed")


if __name__ == "__main__":
    main()
