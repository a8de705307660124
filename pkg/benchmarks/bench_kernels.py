"""Time the numba and numpy kernel backends on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from logq import _kernels
from logq._kernels import numpy_impl


def cases(rng):
    b, n, cand = 2048, 256, 800
    logits = rng.normal(size=(b, n + 1))
    rows = np.broadcast_to(np.arange(b)[:, None], (b, n))
    cols = rng.integers(0, cand, size=(b, n))
    weights = rng.random((b, n))
    items = rng.integers(0, 2000, size=200_000)
    seeds = rng.integers(0, 2**63, size=5).astype(np.uint64)
    grads = rng.normal(size=(b * 4, 32))
    grad_rows = rng.integers(0, 2000, size=b * 4)

    def sketch(impl):
        table = np.zeros((5, 2048), dtype=np.int64)
        buckets = impl.cms_buckets(items, seeds, 2048)
        impl.cms_accumulate(table, buckets, np.ones(len(items), dtype=np.int64))
        return impl.cms_min_query(table, buckets)

    return {
        "row_softmax 2048x257": lambda impl: impl.row_softmax(logits),
        "dense_scatter 2048x256": lambda impl: impl.dense_scatter(b, cand, rows, cols, weights),
        "scatter_rows 8192x32": lambda impl: impl.scatter_rows(np.zeros((2000, 32)), grad_rows, grads),
        "count-min 200k updates": sketch,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = {"numpy": numpy_impl}
    if _kernels.HAVE_NUMBA:
        impls["numba"] = _kernels.numba_impl
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}" + "".join(f"{k + ' ms':>12}" for k in impls) + f"{'speedup':>10}")
    for name, fn in cases(rng).items():
        times = {}
        for label, impl in impls.items():
            fn(impl)  # warm-up (numba compiles on first call)
            times[label] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) * 1e3
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{name:<26}" + "".join(f"{t:>12.3f}" for t in times.values()) + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
