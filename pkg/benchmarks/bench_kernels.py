"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--size N] [--repeats K]

Times the four hot kernels on contiguous float64 buffers and prints one
row per kernel with both backends and the speedup.  The same streams are
fed to both backends; results are asserted bit-identical before timing.
"""

import argparse
import time

import numpy as np

from rcpmerge import kernels


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def build_cases(size, rng):
    g = rng.standard_normal(size)
    s = rng.standard_normal(size)
    tau = -np.abs(rng.standard_normal(size))
    fim = np.abs(rng.standard_normal(size))
    tt = rng.standard_normal(size)
    tr = rng.standard_normal(size)
    key = kernels.name_key(7, "layers.0.mlp.w1")

    def case_squares():
        acc = np.zeros(size)
        kernels.accumulate_squares(acc, g)
        return acc

    def case_votes():
        votes = np.zeros(size, dtype=np.uint32)
        kernels.accumulate_votes(votes, s, tau)
        return votes

    def case_penalty():
        return kernels.penalty_values(fim, tt, tr)

    def case_uniforms():
        return kernels.keyed_uniforms(key, size)

    return {
        "accumulate_squares": case_squares,
        "accumulate_votes": case_votes,
        "penalty_values": case_penalty,
        "keyed_uniforms": case_uniforms,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=10_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = build_cases(args.size, rng)

    print(f"size={args.size:,} elements, repeats={args.repeats} (best-of)")
    header = f"{'kernel':<22} {'numpy':>10} {'numba':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, fn in cases.items():
        timings = {}
        outputs = {}
        for backend in ("numba", "numpy"):  # numba first so JIT warmup is excluded
            kernels.set_backend(backend)
            fn()  # warmup / compile
            outputs[backend] = fn()
            timings[backend] = _time(fn, args.repeats)
        if not np.array_equal(outputs["numpy"], outputs["numba"]):
            raise SystemExit(f"{name}: backends disagree")
        speedup = timings["numpy"] / timings["numba"]
        print(
            f"{name:<22} {timings['numpy'] * 1e3:>8.2f}ms {timings['numba'] * 1e3:>8.2f}ms "
            f"{speedup:>7.2f}x"
        )
    kernels.set_backend(None)


if __name__ == "__main__":
    main()
