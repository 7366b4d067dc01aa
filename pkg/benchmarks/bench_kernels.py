"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The numpy kernels are imported directly, so one process times both paths.
"""
import argparse
import time

import numpy as np

from covsteer import kernels
from covsteer.moments import lattice_for, propagate
from covsteer.montecarlo import _draw
from covsteer.scenarios import build_bicycle, spacecraft_regime


def best_of(fn, repeat):
    fn()  # warm-up, includes compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_propagate(problem, repeat):
    pol = problem.zero_policy()
    rng = np.random.default_rng(0)
    pol.L[:] = 0.05 * rng.standard_normal(pol.L.shape)
    lat = lattice_for(problem)
    saved = kernels.step_mean, kernels.step_cov
    out = {}
    try:
        for name, pair in (("numpy", (kernels.step_mean_np, kernels.step_cov_np)),
                           ("numba", (kernels.step_mean_nb, kernels.step_cov_nb))):
            kernels.step_mean, kernels.step_cov = pair
            out[name] = best_of(lambda: propagate(problem, pol), repeat)
    finally:
        kernels.step_mean, kernels.step_cov = saved
    return len(lat), out


def bench_simulate(problem, samples, repeat):
    pol = problem.zero_policy()
    x0, pvals, W = _draw(problem, samples, 0)
    A, B, D = problem.system.stacked()
    out = {}
    for name, fn in (("numpy", kernels.simulate_np), ("numba", kernels.simulate_nb)):
        out[name] = best_of(lambda: fn(x0, pvals, W, A, B, D, pol.L, pol.v), repeat)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--samples", type=int, default=100000)
    args = ap.parse_args()
    print(f"jit enabled: {kernels.JIT_ENABLED}")
    print(f"{'case':<34}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for problem in (spacecraft_regime("mixed"), build_bicycle(), spacecraft_regime("mixed", horizon=20)):
        K, t = bench_propagate(problem, args.repeat)
        label = f"propagate {problem.name} N={problem.horizon} K={K}"
        print(f"{label:<34}{t['numpy']:>12.4f}{t['numba']:>12.4f}{t['numpy'] / t['numba']:>10.1f}")
    for problem in (spacecraft_regime("mixed"), build_bicycle()):
        t = bench_simulate(problem, args.samples, args.repeat)
        label = f"simulate {problem.name} S={args.samples}"
        print(f"{label:<34}{t['numpy']:>12.4f}{t['numba']:>12.4f}{t['numpy'] / t['numba']:>10.1f}")


if __name__ == "__main__":
    main()
