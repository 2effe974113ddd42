"""Time the hot kernels on the numba backend against the pure numpy fallback.

Each kernel runs on both backends with identical inputs; results are checked
for exact agreement before timings are reported (best wall time over
--repeats runs, after a warmup call that absorbs JIT compilation).

Run:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 9
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from cotpace import accel
from cotpace.selection import ClusterAssignment, SelectionProblem, select_ftgp


def best_time(fn, repeats: int) -> float:
    fn()  # warmup: first numba call pays for compilation
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_bruteforce(rng: np.random.Generator):
    n, k = 18, 4
    deltas = rng.uniform(0.0, 3.0, size=n)
    clusters = rng.integers(0, k, size=n)
    budget = 0.4 * float(deltas.sum())
    return lambda: accel.bruteforce_best_subset(deltas, clusters, k, budget, 1.0)


def bench_greedy(rng: np.random.Generator):
    n, k = 5000, 12
    deltas = rng.uniform(0.0, 3.0, size=n)
    clusters = rng.integers(0, k, size=n)
    budget = 0.3 * float(deltas.sum())
    out = lambda: accel.greedy_admit(deltas, clusters, k, budget, 1.0, 0.1)
    return lambda: out().tobytes()


def bench_kmeans_labels(rng: np.random.Generator):
    points = rng.normal(size=(2000, 64))
    centroids = rng.normal(size=(16, 64))
    return lambda: accel.kmeans_labels(points, centroids).tobytes()


def bench_select_ftgp(rng: np.random.Generator):
    n, k = 2000, 8
    ids = [f"q{i}" for i in range(n)]
    increments = {qid: float(rng.uniform(0.0, 3.0)) for qid in ids}
    assignment = {qid: int(rng.integers(0, k)) for qid in ids}
    clusters = ClusterAssignment(
        n_clusters=k, assignment=assignment, centroids=np.zeros((k, 2))
    )
    budget = 0.3 * sum(increments.values())
    problem = SelectionProblem(
        increments=increments, budget=budget, clusters=clusters, beta=1.0
    )
    return lambda: tuple(select_ftgp(problem, eps=0.1))


BENCHES = [
    ("bruteforce_best_subset (n=18, 2^18 subsets)", bench_bruteforce),
    ("greedy_admit (5000 candidates)", bench_greedy),
    ("kmeans_labels (2000 x 64, 16 centroids)", bench_kmeans_labels),
    ("select_ftgp end to end (2000 candidates)", bench_select_ftgp),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timed runs per kernel")
    parser.add_argument("--seed", type=int, default=0, help="input generation seed")
    args = parser.parse_args()

    if not accel.HAVE_NUMBA:
        print("numba is not importable; timing the numpy fallback only")
    header = f"{'kernel':<46} {'numpy':>10} {'numba':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))

    for name, make in BENCHES:
        fn = make(np.random.default_rng(args.seed))
        accel.set_backend("numpy")
        ref = fn()
        t_np = best_time(fn, args.repeats)
        if accel.HAVE_NUMBA:
            accel.set_backend("numba")
            if fn() != ref:
                raise AssertionError(f"{name}: backends disagree")
            t_nb = best_time(fn, args.repeats)
            accel.set_backend("numpy")
            print(f"{name:<46} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms {t_np / t_nb:>7.1f}x")
        else:
            print(f"{name:<46} {t_np * 1e3:>8.2f}ms {'-':>10} {'-':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
