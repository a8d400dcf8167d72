"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case runs once untimed per backend (numba compile / cache load), then
reports the best of ``--repeat`` timings and the numba speed-up.
"""

import argparse
import time

import numpy as np

from adjointnet import cavity, darcy, kernels
from adjointnet.meshfield import make_grid1d, make_grid2d


def _thomas_case():
    rng = np.random.default_rng(0)
    n = 2000
    lower = rng.uniform(-1, 0, n)
    upper = rng.uniform(-1, 0, n)
    diag = 2.5 + rng.uniform(0, 1, n)
    rhs = rng.standard_normal((n, 8))
    return lambda: kernels.thomas(lower, diag, upper, rhs)


def _darcy_case():
    cfg = darcy.DarcyConfig(make_grid1d(100, 100.0), 1e-14, dt=250.0, t_end=250.0 * 97)
    return lambda: darcy.solve_forward(cfg)


def _cavity_case():
    cfg = cavity.CavityConfig(make_grid2d(41, 41, 4.0, 4.0), nt=100)
    return lambda: cavity.run(cfg)


CASES = {
    "thomas n=2000 x8 rhs": _thomas_case,
    "darcy forward 97 steps": _darcy_case,
    "cavity 41x41 100 steps": _cavity_case,
}


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    original = kernels.get_backend()
    print(f"{'case':<26}{'numpy [s]':>12}{'numba [s]':>12}{'speed-up':>10}")
    try:
        for name, make in CASES.items():
            fn = make()
            res = {}
            for backend in ("numpy", "numba"):
                kernels.set_backend(backend)
                res[backend] = best_of(fn, args.repeat)
            print(f"{name:<26}{res['numpy']:>12.4f}{res['numba']:>12.4f}"
                  f"{res['numpy'] / res['numba']:>9.1f}x")
    finally:
        kernels.set_backend(original)


if __name__ == "__main__":
    main()
