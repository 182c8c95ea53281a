"""Compare the compiled GEMM kernel against the numpy fallback.

Usage: python benchmarks/bench_gemm.py [--sizes 16,32,64,128] [--reps 5]
"""

import argparse
import timeit

import numpy as np

from unimul import kernels


def bench(fn, a, b, c, reps):
    def once():
        c[:] = 0.0
        fn(a, b, c)

    return min(timeit.repeat(once, number=1, repeat=reps))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="16,32,64,128,256")
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    backends = [("numpy", kernels.gemm_accumulate_numpy)]
    if kernels.gemm_accumulate_compiled is not None:
        backends.append(("compiled", kernels.gemm_accumulate_compiled))
    else:
        print("note: compiled extension not built, benchmarking numpy only")
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'n':>6} " + " ".join(f"{name:>12}" for name, _ in backends)
          + f" {'gflop/s best':>14}")

    rng = np.random.default_rng(0)
    for n in sizes:
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, n))
        c = np.zeros((n, n))
        times = [bench(fn, a, b, c, args.reps) for _, fn in backends]
        best = min(times)
        gflops = 2 * n**3 / best / 1e9
        print(f"{n:>6} " + " ".join(f"{t * 1e6:>10.1f}us" for t in times)
              + f" {gflops:>14.2f}")


if __name__ == "__main__":
    main()
