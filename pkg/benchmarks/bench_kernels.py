"""Time the compiled contrastive kernel against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat R]
"""
import argparse
import timeit

import numpy as np

from kmcl import kernels

SIZES = [(16, 8, 1), (64, 8, 1), (128, 8, 1), (16, 8, 32), (64, 8, 32), (128, 8, 32)]


def inputs(N, K, D, seed=0):
    rng = np.random.default_rng(seed)
    mu = rng.normal(0, 1, (N, K, D))
    var = rng.uniform(0.5, 2.0, (N, K, D))
    labels = (rng.random((N, K)) < 0.3).astype(np.int8)
    return mu, var, labels, 0.2, 32.0 if D == 1 else 1.0, True


def best_time(fn, args, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-6)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if kernels.compiled_impl is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'N':>5} {'K':>3} {'D':>3} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for N, K, D in SIZES:
        a = inputs(N, K, D)
        t_py = best_time(kernels.python_impl, a, args.repeat)
        t_c = best_time(kernels.compiled_impl, a, args.repeat)
        lp, gp, vp = kernels.python_impl(*a)
        lc, gc, vc = kernels.compiled_impl(*a)
        diff = max(abs(lp - lc), float(np.max(np.abs(gp - gc))), float(np.max(np.abs(vp - vc))))
        print(f"{N:>5} {K:>3} {D:>3} {t_py * 1e3:>10.3f} {t_c * 1e3:>10.3f} {t_py / t_c:>7.1f}x {diff:>11.1e}")


if __name__ == "__main__":
    main()
