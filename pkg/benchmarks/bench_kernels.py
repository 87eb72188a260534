"""Compare the compiled and numpy backward-induction kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Builds recombination-free trees of increasing size, times one backward sweep
per backend and checks that the two backends agree.
"""
import argparse
import time

import numpy as np

from entropic_pricer import kernels
from entropic_pricer.market import tree_from_levels

SHAPES = [
    # (ratios, probabilities, horizon)
    ([0.8, 1.0, 1.3], [1 / 3, 1 / 3, 1 / 3], 3),
    ([0.85, 1.0, 1.2], [0.3, 0.45, 0.25], 5),
    ([0.7, 0.9, 1.1, 1.4], [0.25] * 4, 5),
    ([0.8, 0.95, 1.05, 1.25], [0.2, 0.3, 0.3, 0.2], 6),
]


def best_time(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'nodes':>8} {'leaves':>8} " + " ".join(f"{b + ' [ms]':>14}" for b in backends)
          + f" {'speedup':>9} {'max |diff|':>11}")
    for ratios, probs, horizon in SHAPES:
        tree = tree_from_levels([1.0], [(p, [r]) for r, p in zip(ratios, probs)], horizon)
        terminal = rng.uniform(-3, 3, tree.n_leaves)
        times, roots = {}, {}
        for b in backends:
            times[b] = best_time(lambda: kernels.backward_induction(tree, terminal, backend=b),
                                 args.repeat)
            roots[b] = kernels.backward_induction(tree, terminal, backend=b).logv
        diff = max(np.abs(roots[b] - roots[backends[0]]).max() for b in backends)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        cells = " ".join(f"{1e3 * times[b]:14.3f}" for b in backends)
        print(f"{tree.n_nodes:8d} {tree.n_leaves:8d} {cells} {speed:9.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
