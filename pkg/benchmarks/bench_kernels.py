"""Time the compiled and pure-Python stepping kernels on the same problem.

Usage::

    python benchmarks/bench_kernels.py [--cells 100 400 1600] [--steps 200] [--repeat 5]

Prints one row per grid size with the best-of-repeat time per step for each
backend, the speed-up, and the largest difference between the two results.
"""

import argparse
import timeit

import numpy as np

from nodalsteer import _pykernels
from nodalsteer.nonlinearity import KIND_CODES

try:
    from nodalsteer import _kernels
except ImportError:  # extension not built
    _kernels = None

KIND_SINUSOIDAL = KIND_CODES["sinusoidal"]


def problem(n_cells: int):
    x = np.linspace(0.0, 1.0, n_cells + 1)
    u = np.sin(np.pi * x) + 0.3 * np.sin(3 * np.pi * x)
    u[0] = u[-1] = 0.0
    v = 2.0 + np.cos(2 * np.pi * x)
    return u, v, 1.0 / n_cells


def best_time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[100, 400, 1600])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'cells':>6} {'python us/step':>15} {'compiled us/step':>17} {'speed-up':>9} {'max diff':>10}")
    for n in args.cells:
        u, v, h = problem(n)
        dt = 1e-4
        call = (v, dt, h, args.steps, KIND_SINUSOIDAL, 1.0, 2)
        py = _pykernels.cn_advance(u.copy(), *call)
        cc = _kernels.cn_advance(u.copy(), *call)
        t_py = best_time(lambda: _pykernels.cn_advance(u.copy(), *call), args.repeat)
        t_cc = best_time(lambda: _kernels.cn_advance(u.copy(), *call), args.repeat)
        diff = float(np.max(np.abs(np.asarray(py) - np.asarray(cc))))
        print(f"{n:>6} {1e6 * t_py / args.steps:>15.2f} {1e6 * t_cc / args.steps:>17.2f} "
              f"{t_py / t_cc:>9.1f} {diff:>10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
