"""Compare the numba and numpy kernels used by the metrics and the filter.

    python benchmarks/bench_kernels.py [--repeat 5]

Runs both implementations in one process regardless of MMQS_DISABLE_NUMBA,
checks they agree, and prints the best wall time per kernel.
"""
import argparse
import timeit

import numpy as np

from mmqs import _accel


def lcs_case(rng, n_pairs=2000, length=40, vocab=30):
    return [(rng.integers(0, vocab, rng.integers(1, length)), rng.integers(0, vocab, rng.integers(1, length)))
            for _ in range(n_pairs)]


def cosine_case(rng, rows=5000, dim=512):
    return rng.normal(size=(rows, dim)), rng.normal(size=dim)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    pairs = lcs_case(rng)
    matrix, vec = cosine_case(rng)
    # a filter call scores a handful of sentences; repeat it like a batch run would
    small = [cosine_case(rng, rows=6, dim=32) for _ in range(1000)]

    kernels = {
        "lcs_length (2000 pairs)": (
            lambda: [_accel.lcs_length_numba(a, b) for a, b in pairs],
            lambda: [_accel.lcs_length_numpy(a, b) for a, b in pairs],
        ),
        "cosine_rows (1000 x 6x32)": (
            lambda: [_accel.cosine_rows_numba(m, v) for m, v in small],
            lambda: [_accel.cosine_rows_numpy(m, v) for m, v in small],
        ),
        "cosine_rows (5000x512)": (
            lambda: _accel.cosine_rows_numba(matrix, vec),
            lambda: _accel.cosine_rows_numpy(matrix, vec),
        ),
    }
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (fast, slow) in kernels.items():
        np.testing.assert_allclose(fast(), slow(), atol=1e-12)  # also warms the JIT
        t_fast = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{t_fast:>10.2f}{t_slow:>10.2f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
