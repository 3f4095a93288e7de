"""Benchmark the compiled advection kernel against the numpy fallback.

Runs the exact convolution that dominates every integration on a range of
truncation radii, checks that both backends agree to machine precision,
and prints per-call timings plus the speedup.

Usage: python3 benchmarks/bench_kernels.py [--radii 1 2 3] [--repeats 20]
"""

import argparse
import time

import numpy as np

from nscontrol.kernels import advection_convolve_numpy
from nscontrol.spectral import bilinear_B, get_truncation, random_field

try:
    from nscontrol._kernels import advection_convolve as advection_convolve_cython
except ImportError:
    advection_convolve_cython = None


def build_inputs(radius, rng):
    """Full-mode-list arguments for one convolution at the given radius."""
    trunc = get_truncation(radius)
    u = random_field(trunc, rng)
    v = random_field(trunc, rng)
    # mirror what bilinear_B feeds the kernel: both signs of every mode
    ku = np.concatenate([trunc.reps, -trunc.reps])
    cu = np.concatenate([u.coeffs, np.conj(u.coeffs)])
    cv = np.concatenate([v.coeffs, np.conj(v.coeffs)])
    bound = radius
    side = 2 * bound + 1
    table = -np.ones((side, side, side), dtype=np.int64)
    for i, k in enumerate(trunc.reps):
        table[tuple(k + bound)] = i
    return ku, cu, ku, cv, table, bound, trunc.n_reps


def time_backend(fn, args, repeats):
    fn(*args)  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--radii", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--repeats", type=int, default=20)
    ns = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"cython backend available: {advection_convolve_cython is not None}")
    print(f"{'radius':>6} {'modes':>6} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8}")
    for radius in ns.radii:
        args = build_inputs(radius, rng)
        out_np = advection_convolve_numpy(*args)
        t_np = time_backend(advection_convolve_numpy, args, ns.repeats)
        if advection_convolve_cython is not None:
            out_cy = advection_convolve_cython(*args)
            err = np.max(np.abs(out_cy - out_np))
            assert err < 1e-12, f"backend mismatch at radius {radius}: {err:.3e}"
            t_cy = time_backend(advection_convolve_cython, args, ns.repeats)
            print(
                f"{radius:>6} {args[-1]:>6} {1e3 * t_np:>11.3f} "
                f"{1e3 * t_cy:>12.3f} {t_np / t_cy:>8.1f}x"
            )
        else:
            print(f"{radius:>6} {args[-1]:>6} {1e3 * t_np:>11.3f} {'-':>12} {'-':>8}")

    # sanity: full bilinear term through the public API stays finite
    trunc = get_truncation(ns.radii[-1])
    b = bilinear_B(random_field(trunc, rng), random_field(trunc, rng))
    assert np.all(np.isfinite(b.coeffs))
    print("agreement check passed")


if __name__ == "__main__":
    main()
