"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--pixels N] [--repeat R]

Both variants are called on the same inputs and checked for agreement
before timing. The first numba call (compilation or cache load) is excluded.
"""

import argparse
import timeit

import numpy as np

from dimma.kernels import KERNELS


def make_inputs(n, rng):
    side = int(np.sqrt(n))
    m = 4
    return {
        "equalize_u8": (rng.integers(0, 256, (side, side, 3)).astype(np.uint8),),
        "bin_moments": (rng.integers(0, 256, n).astype(np.int64), rng.random(n)),
        "ratio_field": (rng.integers(0, 256, n).astype(np.int64), rng.standard_normal(n),
                        rng.uniform(0.1, 0.9, 256), rng.uniform(0, 0.1, 256),
                        1.2, 0.7, 1e-4, 1.5),
        "sample_mixture": (rng.dirichlet(np.ones(m), n), rng.normal(0, 0.1, (n, m)),
                           rng.uniform(0.01, 0.2, (n, m)), rng.random(n), rng.random(n),
                           rng.standard_normal(n), 0.7, 3.0),
    }


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pixels", type=int, default=256 * 256 * 3)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    inputs = make_inputs(args.pixels, np.random.default_rng(0))
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (fast, slow) in KERNELS.items():
        x = inputs[name]
        if not agree(fast(*x), slow(*x)):
            raise SystemExit(f"{name}: numba and numpy results disagree")
        t_fast = min(timeit.repeat(lambda: fast(*x), number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(lambda: slow(*x), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_fast:>10.2f}{t_slow:>10.2f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
