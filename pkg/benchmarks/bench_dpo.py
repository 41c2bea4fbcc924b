"""Benchmark the preference-loss kernels: numba @njit vs pure numpy.

Usage: python3 benchmarks/bench_dpo.py [--sizes 1000,10000,100000] [--dim 64]

Both backends are imported directly (no env flag needed) so they can be timed
in one process.  Results also cross-check that the two paths agree to 1e-12.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from rmf.dpo.kernels import (
    HAVE_NUMBA,
    _grad_np,
    _loss_np,
    _margins_np,
)

if HAVE_NUMBA:
    from rmf.dpo.kernels import _grad_nb, _loss_nb, _margins_nb


def bench(fn, *args, repeat=5, number=10) -> float:
    """Best-of wall time per call, in seconds."""
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="1000,10000,100000",
                        help="comma-separated batch sizes")
    parser.add_argument("--dim", type=int, default=64, help="feature dimension")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.Generator(np.random.PCG64(args.seed))

    if not HAVE_NUMBA:
        print("numba unavailable (or disabled); only the numpy path can be timed")

    print(f"{'n':>8} {'kernel':<8} {'numpy (us)':>12} {'numba (us)':>12} {'speedup':>8}")
    for n in sizes:
        diff = rng.normal(size=(n, args.dim))
        theta = rng.normal(size=args.dim)
        theta_ref = rng.normal(size=args.dim)
        beta = 0.1

        kernels = [("margins", _margins_np, "_margins_nb"),
                   ("loss", _loss_np, "_loss_nb"),
                   ("grad", _grad_np, "_grad_nb")]
        for label, np_fn, nb_name in kernels:
            t_np = bench(np_fn, diff, theta, theta_ref, beta)
            if HAVE_NUMBA:
                nb_fn = globals()[nb_name]
                nb_fn(diff, theta, theta_ref, beta)  # trigger compilation
                t_nb = bench(nb_fn, diff, theta, theta_ref, beta)
                a, b = np.asarray(np_fn(diff, theta, theta_ref, beta)), np.asarray(nb_fn(diff, theta, theta_ref, beta))
                assert np.allclose(a, b, atol=1e-12), f"{label} backends disagree at n={n}"
                print(f"{n:>8} {label:<8} {t_np * 1e6:>12.1f} {t_nb * 1e6:>12.1f} {t_np / t_nb:>7.2f}x")
            else:
                print(f"{n:>8} {label:<8} {t_np * 1e6:>12.1f} {'-':>12} {'-':>8}")


if __name__ == "__main__":
    main()
