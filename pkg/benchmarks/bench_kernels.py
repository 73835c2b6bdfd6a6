"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once untimed (numba compiles then), then ``--repeat``
times; the best wall time per path is reported along with a check that
both paths returned identical results.
"""

import argparse
import time

import numpy as np

from swapcon import _kernels


def _cases(rng):
    s = np.sort(rng.integers(0, 1000, 200_000).astype(float))
    y = rng.integers(0, 2, s.size).astype(np.int64)
    train = rng.standard_normal((5_000, 24))
    queries = rng.standard_normal((500, 24))
    xs = np.sort(rng.standard_normal(100_000))
    g, h = rng.standard_normal(xs.size), rng.uniform(0.05, 0.25, xs.size)
    # complete depth-8 tree on random features
    depth, n_int = 8, 2 ** 8 - 1
    n = 2 * n_int + 1
    feature = np.full(n, -1, dtype=np.int64)
    feature[:n_int] = rng.integers(0, 24, n_int)
    threshold = np.zeros(n)
    threshold[:n_int] = rng.standard_normal(n_int) * 0.5
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    left[:n_int] = 2 * np.arange(n_int) + 1
    right[:n_int] = 2 * np.arange(n_int) + 2
    default_left = rng.integers(0, 2, n).astype(np.bool_)
    value = rng.standard_normal(n)
    X = rng.standard_normal((200_000, 24))
    return {
        "auc_counts (n=200k)": ("auc_counts", (s, y)),
        "knn (5k x 500, k=5)": ("knn", (train, queries, 5)),
        "split_scan (n=100k)": ("split_scan", (xs, g, h, 1.0, 1.0)),
        f"tree_predict (200k rows, depth {depth})":
            ("tree_predict", (X, feature, threshold, left, right, default_left, value)),
    }


def _best(fn, args, repeat):
    out = fn(*args)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    cases = _cases(np.random.default_rng(args.seed))
    print(f"{'kernel':40s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}  same")
    for label, (name, a) in cases.items():
        t_np, r_np = _best(getattr(_kernels.numpy_impl, name), a, args.repeat)
        t_nb, r_nb = _best(getattr(_kernels.numba_impl, name), a, args.repeat)
        print(f"{label:40s} {t_np * 1e3:8.2f}ms {t_nb * 1e3:8.2f}ms {t_np / t_nb:7.1f}x  "
              f"{_same(r_np, r_nb)}")


if __name__ == "__main__":
    main()
