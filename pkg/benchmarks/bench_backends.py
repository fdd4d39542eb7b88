"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_backends.py --repeat 3
"""
import argparse
import time

import numpy as np

from primelab import _pure

try:
    from primelab import _native
except ImportError:
    _native = None


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(size):
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 50257, size=size)
    n = 14
    joint = rng.random(2**n)
    joint /= joint.sum()
    return {
        "fisher_yates(50257)": lambda m: m.fisher_yates(50257, 42),
        f"base_digits({size}, b=2, ell=16)": lambda m: m.base_digits(ids, 2, 16),
        f"count_ids({size})": lambda m: m.count_ids(ids, 50257),
        f"subset_entropies(n={n}, b=2)": lambda m: m.subset_entropies(joint, n, 2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", type=int, default=1_000_000)
    args = ap.parse_args()
    if _native is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':40s} {'pure (s)':>10s} {'native (s)':>11s} {'speedup':>8s}")
    for name, fn in cases(args.size).items():
        tp = best_of(lambda: fn(_pure), args.repeat)
        if _native is None:
            print(f"{name:40s} {tp:10.4f} {'-':>11s} {'-':>8s}")
            continue
        tn = best_of(lambda: fn(_native), args.repeat)
        print(f"{name:40s} {tp:10.4f} {tn:11.4f} {tp / tn:7.1f}x")


if __name__ == "__main__":
    main()
