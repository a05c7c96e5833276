"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--strata 1000] [--repeat 5]

Both flavours are called directly, so the ABERRANT_DISABLE_NUMBA flag does not
matter here.  The first numba call (compile or cache load) is excluded.
"""
import argparse
import time

import numpy as np
from scipy.stats import norm

from aberrant import _accel, adaptive, kernels
from aberrant.core import aberrant_indicators, aberrant_ranks
from aberrant.simlab import GeneratorSpec, generate


def best_time(fn, repeat):
    fn()
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def cases(I):
    gen = GeneratorSpec.model(1, 1.0)
    sample = generate(gen, I, seed=1)
    ind = aberrant_indicators(sample, gen.spec)
    ranks = aberrant_ranks(sample, gen.spec)
    prep = adaptive._Prepared(sample, ind, ranks)
    off = sample.offsets
    gamma = 4.0
    w = np.random.default_rng(2).uniform(1.0, gamma, sample.n_units)
    G = np.sort(np.random.default_rng(3).uniform(size=(100_000, 4)), axis=1)
    Q = float(norm.ppf(0.975))
    s0 = adaptive._inner_s(prep.u, off, gamma)
    a = -prep.Qm.sum(axis=1) / I
    Cm = np.ascontiguousarray(2.0 * prep.Qm / I)

    def solve(f):
        return lambda: f(kernels.FORM_MARGIN, prep.Qm, off, gamma, prep.t, Q, np.ones(2),
                         np.array([True, True]), False, np.ones(2), prep.u, s0, 1e-9, 200,
                         False, False)

    return [
        ("sep_moments", lambda f: (lambda: f(ranks, off, gamma)),
         kernels.sep_moments_nb, kernels.sep_moments_np),
        ("rho_grad", lambda f: (lambda: f(w, prep.Qm[0], prep.Qm[1], off)),
         kernels.rho_grad_nb, kernels.rho_grad_np),
        ("phi_rows (1e5 x 4)", lambda f: (lambda: f(G, gamma)),
         kernels.phi_rows_nb, kernels.phi_rows_np),
        ("maxmin_affine", lambda f: (lambda: f(a, Cm, off, gamma, 200)),
         kernels.maxmin_affine_nb, kernels.maxmin_affine_np),
        ("pd_solve (margin)", solve, kernels.pd_solve_nb, kernels.pd_solve_np),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--strata", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return
    print(f"I={args.strata}, best of {args.repeat}")
    print(f"{'kernel':<22}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, make, nb, np_ in cases(args.strata):
        t_nb = best_time(make(nb), args.repeat)
        t_np = best_time(make(np_), args.repeat)
        print(f"{name:<22}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
