"""Times the multi-Gaussian shortfall kernel under both backends.

Run: python3 benchmarks/bench_kernels.py [--repeat N]

Each case evaluates the shortfall and its slope at a batch of shifts and
reports the best-of-N wall time per backend, the speedup, and the largest
disagreement between the two.
"""

import argparse
import time

import numpy as np

from dpmix import _kernels_numba as nb
from dpmix import _kernels_numpy as npk

# (eps, sigma at unit sensitivity, K, number of shifts)
CASES = [
    (1.0, 0.29, 2, 64),
    (1.0, 0.27, 10, 64),
    (0.25, 14.7, 20, 64),
    (10.0, 0.02, 9, 64),
    (2.0, 0.12, 20, 64),
]


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    # Compile (or load from cache) before timing.
    nb.shortfall_curve(1.0, 0.5, 1, np.array([0.5]))

    print(f"{'eps':>6} {'sigma':>7} {'K':>3} {'shifts':>6} {'numba ms':>10} "
          f"{'numpy ms':>10} {'speedup':>8} {'max diff':>10}")
    for eps, lam, K, n in CASES:
        phis = np.linspace(0.0, 1.0, n)
        t_nb, (s_nb, d_nb) = best_time(lambda: nb.shortfall_curve(eps, lam, K, phis), args.repeat)
        t_np, (s_np, d_np) = best_time(lambda: npk.shortfall_curve(eps, lam, K, phis), args.repeat)
        diff = max(np.max(np.abs(s_nb - s_np)), np.max(np.abs(d_nb - d_np)))
        print(f"{eps:6g} {lam:7g} {K:3d} {n:6d} {1e3 * t_nb:10.2f} "
              f"{1e3 * t_np:10.2f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
