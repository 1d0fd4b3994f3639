"""Time each kernel under the compiled and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Sizes match the benchmarks' hot paths: 50 perception particles in 2-D,
32 planning particles with 20-step horizons, and a 200 x 200 Gibbs grid.
"""

import argparse
import json
import timeit

import numpy as np

from svbp import kernels


def cases(rng):
    Z = rng.normal(size=(50, 2))
    G = rng.normal(size=(50, 2))
    logits = rng.normal(size=(50, 50))
    grads = rng.normal(size=(50, 50, 2))
    ps = rng.uniform(0, 2, size=(32, 20, 2))
    pt = rng.uniform(0, 2, size=(32, 20, 2))
    alphas = 500.0 * (1 - np.arange(20) / 20)
    A = rng.normal(size=(1000, 2))
    B = rng.normal(size=(50, 2))
    g = np.linspace(0, 10, 200)
    grid = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    base = np.zeros(len(grid))
    nbr = rng.uniform(0, 10, size=(3, 2))
    L = np.full(3, 2.0)
    alpha = np.full(3, 25.0)
    work = np.empty(len(grid))
    return {
        "rbf_stein (50x2)": lambda: kernels.rbf_stein(Z, G, 0.5),
        "message_reduce (50x50x2)": lambda: kernels.message_reduce(logits, grads),
        "distance_pairwise (50x50)": lambda: kernels.distance_pairwise(Z, G, 1.0, 25.0),
        "collision_pairwise (32x32x20)": lambda: kernels.collision_pairwise(ps, pt, alphas, 0.5, 0.3, 1e-3),
        "rbf_sum (1000x50)": lambda: kernels.rbf_sum(A, B, 0.5),
        "grid_conditional_draw (40000 cells)": lambda: kernels.grid_conditional_draw(
            base, grid, nbr, L, alpha, 0.5, work),
    }


def bench(repeat: int) -> dict:
    results = {}
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        for name, fn in cases(np.random.default_rng(0)).items():
            fn()  # warm-up
            n = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
            best = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
            results.setdefault(name, {})[backend] = best
    return results


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json")
    args = p.parse_args()
    initial = kernels.BACKEND
    res = bench(args.repeat)
    kernels.use_backend(initial)
    print(f"{'kernel':38s} {'compiled (us)':>14s} {'python (us)':>12s} {'speedup':>8s}")
    for name, t in res.items():
        c, py = t.get("compiled"), t["python"]
        c_txt = f"{c * 1e6:14.1f}" if c else f"{'n/a':>14s}"
        sp = f"{py / c:7.1f}x" if c else f"{'':>8s}"
        print(f"{name:38s} {c_txt} {py * 1e6:12.1f} {sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
