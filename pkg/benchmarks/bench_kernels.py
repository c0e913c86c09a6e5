"""Time the numba and numpy paths of each kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 25]

The first numba call compiles (or loads the on-disk cache); it is timed
separately and excluded from the per-call numbers.
"""

import argparse
import time

import numpy as np

from papn import _kernels as K


def best_of(fn, args, repeat, inner):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        times.append((time.perf_counter() - t) / inner)
    return min(times)


def cases(n, rng):
    coords = rng.uniform([120.1, 30.2], [120.2, 30.3], size=(n, 2))
    dist = K.haversine_matrix_np(coords)
    opens = np.minimum(np.sort(rng.integers(0, n, size=n)), np.arange(n))
    masks = (opens[None, :] <= np.arange(n)[:, None]).astype(np.int8)
    route = (np.zeros(n), dist[0].copy(), dist, masks, n)
    x, y = rng.permutation(n), rng.permutation(n)
    return {
        "haversine_matrix": (K.haversine_matrix_np, K.haversine_matrix_nb, (coords,)),
        "greedy_route": (K.greedy_route_np, K.greedy_route_nb, route),
        "kendall_counts": (K.kendall_counts_np, K.kendall_counts_nb, (x, y)),
        "levenshtein": (K.levenshtein_np, K.levenshtein_nb, (x, y)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--inner", type=int, default=200)
    ap.add_argument("--n", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"active backend: {K.BACKEND}; n={args.n}")
    print(f"{'kernel':<18}{'first nb call':>15}{'numpy/call':>14}{'numba/call':>14}{'speedup':>10}")
    for name, (f_np, f_nb, call_args) in cases(args.n, rng).items():
        t = time.perf_counter()
        f_nb(*call_args)
        first = time.perf_counter() - t
        a, b = f_np(*call_args), f_nb(*call_args)
        assert np.allclose(a, b), f"{name}: paths disagree"
        t_np = best_of(f_np, call_args, args.repeat, args.inner)
        t_nb = best_of(f_nb, call_args, args.repeat, args.inner)
        print(f"{name:<18}{first * 1e3:>13.1f}ms{t_np * 1e6:>12.1f}us{t_nb * 1e6:>12.1f}us{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
