"""Benchmark the compiled CSR kernel against the pure-numpy fallback.

The sparse-dense product is the training hot loop: every forward and
gradient pass multiplies the normalized adjacency into the embedding table
once per layer. Sizes below bracket desk-scale fixtures up to a
Gowalla-scale graph (~45k nodes, ~590k stored entries, d=64).

Run:  python benchmarks/bench_spmm.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from graphcf import sparse
from graphcf.sparse import from_arrays, spmm

CASES = [
    # (n_users, n_items, n_edges, dim)
    (300, 300, 5_000, 16),
    (3_000, 3_000, 60_000, 64),
    (26_000, 20_000, 295_000, 64),
]


def bipartite(n_users, n_items, n_edges, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.integers(0, n_users, size=n_edges)
    i = rng.integers(0, n_items, size=n_edges)
    pairs = np.unique(np.stack([u, n_users + i], axis=1), axis=0)
    n = n_users + n_items
    ones = np.ones(len(pairs))
    return from_arrays(
        n, n,
        np.concatenate([pairs[:, 0], pairs[:, 1]]),
        np.concatenate([pairs[:, 1], pairs[:, 0]]),
        np.concatenate([ones, ones]),
    )


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not sparse.HAVE_COMPILED_KERNEL:
        print("compiled kernel not built; nothing to compare")
        return

    print(f"{'nodes':>8} {'nnz':>9} {'dim':>4} {'python':>10} {'compiled':>10} {'speedup':>8}  max|diff|")
    for n_users, n_items, n_edges, dim in CASES:
        a = bipartite(n_users, n_items, n_edges)
        x = np.random.default_rng(1).standard_normal((a.n_cols, dim))

        sparse.set_backend("python")
        t_py = best_of(lambda: spmm(a, x), args.repeats)
        y_py = spmm(a, x)

        sparse.set_backend("compiled")
        t_cy = best_of(lambda: spmm(a, x), args.repeats)
        y_cy = spmm(a, x)

        sparse.set_backend("auto")
        diff = float(np.abs(y_py - y_cy).max())
        print(f"{a.n_rows:>8} {a.nnz:>9} {dim:>4} {t_py * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms "
              f"{t_py / t_cy:>7.2f}x  {diff:.2e}")


if __name__ == "__main__":
    main()
