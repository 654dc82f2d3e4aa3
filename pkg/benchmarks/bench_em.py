"""Benchmark the compiled EM kernel against the numpy fallback.

Runs the full weighted EM solve on a grid of problem sizes with both
backends and reports per-solve wall time and the speedup factor. The two
backends produce identical iterates, so timings are directly comparable.

Usage:
    python benchmarks/bench_em.py [--repeats 20]
"""

import argparse
import time

import numpy as np

from bobgmm import _em_py
from bobgmm.harness import SimSetting, default_prior, generate_simulation, init_params, standardize
from bobgmm.random_weighting import SeededRng, WeightScheme, draw_weights

try:
    from bobgmm import _em_cy
except ImportError:
    _em_cy = None


def build_problem(n, d, K, seed):
    rng = SeededRng(seed)
    Y, _ = generate_simulation(SimSetting(n, d, K), rng.child(0))
    Ys, _ = standardize(Y)
    prior = default_prior(K, d, 1.0, d + 2.0)
    init = init_params(Ys, K, 10, rng.child(1), prior)
    w = draw_weights(WeightScheme.WBB1, rng.child(2), n, K)
    return (
        np.ascontiguousarray(Ys),
        np.ascontiguousarray(w.likelihood_weights),
        float(w.prior_weight_pi),
        np.ascontiguousarray(w.prior_weights_mu),
        np.ascontiguousarray(w.prior_weights_sigma),
        np.ascontiguousarray(prior.concentrations),
        np.ascontiguousarray(prior.prior_means),
        np.ascontiguousarray(prior.precisions_scale),
        np.ascontiguousarray(prior.dofs, dtype=float),
        np.ascontiguousarray(prior.scale_mats),
        np.ascontiguousarray(init.weights),
        np.ascontiguousarray(init.means),
        np.ascontiguousarray(init.covs),
        None,
        500,
        1e-8,
    )


def time_backend(run_em, args, repeats):
    run_em(*args)  # warm up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = run_em(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out[3]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    cli = parser.parse_args()

    if _em_cy is None:
        print("compiled backend not available; build the package first")
        return

    cases = [(50, 5, 2), (150, 5, 3), (200, 10, 2), (150, 15, 4)]
    print(f"{'n':>5} {'d':>3} {'K':>2} {'iters':>6} {'python':>10} {'cython':>10} {'speedup':>8}")
    for n, d, K in cases:
        args = build_problem(n, d, K, seed=n + d + K)
        t_py, it_py = time_backend(_em_py.run_em, args, cli.repeats)
        t_cy, it_cy = time_backend(_em_cy.run_em, args, cli.repeats)
        assert it_py == it_cy, "backends disagree on iteration count"
        print(
            f"{n:>5} {d:>3} {K:>2} {it_cy:>6} {t_py * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms "
            f"{t_py / t_cy:>7.1f}x"
        )


if __name__ == "__main__":
    main()
