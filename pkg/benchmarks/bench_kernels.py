"""Compiled vs. pure-Python kernels: gradient-descent oracle and exact line search.

    python benchmarks/bench_kernels.py [--repeats 5]

Both kernels are called with identical inputs; the script also reports the
largest output difference so a speedup never hides a behaviour change.
"""

import argparse
import timeit

import numpy as np

from svmpool import _kernels_py
from svmpool.svm import lipschitz_bound

try:
    from svmpool import _kernels
except ImportError:
    _kernels = None


def gd_case(rng, n, p, iterations):
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    X = rng.standard_normal((n, p)) + 0.5 * y[:, None]
    c = 10.0
    step = 1.0 / lipschitz_bound(X, 1.0, c, True)
    return (X, y, 1.0, c, True, step, iterations, 0.0)


def line_search_case(rng, n):
    return (rng.standard_normal(n), rng.standard_normal(n), 0.7, -3.0, 2.0)


def bench(name, args, repeats):
    times = {}
    outs = {}
    for label, mod in (("python", _kernels_py), ("cython", _kernels)):
        if mod is None:
            continue
        fn = getattr(mod, name)
        outs[label] = fn(*args)
        number = 1 if name == "gd_sqhinge" else 200
        times[label] = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeats)) / number
    diff = None
    if len(outs) == 2:
        a, b = outs["python"], outs["cython"]
        if isinstance(a, tuple):
            diff = max(float(np.max(np.abs(a[0] - b[0]))), abs(a[1] - b[1]))
        else:
            diff = abs(a - b)
    return times, diff


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)

    cases = [
        ("gd_sqhinge", "n=20 p=5, 20000 it", gd_case(rng, 20, 5, 20_000)),
        ("gd_sqhinge", "n=50 p=10, 20000 it", gd_case(rng, 50, 10, 20_000)),
        ("sqhinge_line_search", "n=100", line_search_case(rng, 100)),
        ("sqhinge_line_search", "n=10000", line_search_case(rng, 10_000)),
    ]
    if _kernels is None:
        print("compiled kernels not built; showing the pure-Python timings only")
    print(f"{'kernel':<22}{'case':<22}{'python ms':>12}{'cython ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, label, case in cases:
        times, diff = bench(name, case, args.repeats)
        py = 1e3 * times["python"]
        cy = 1e3 * times["cython"] if "cython" in times else float("nan")
        speed = py / cy if "cython" in times else float("nan")
        diff_s = "-" if diff is None else f"{diff:.1e}"
        print(f"{name:<22}{label:<22}{py:>12.3f}{cy:>12.3f}{speed:>9.1f}x{diff_s:>12}")


if __name__ == "__main__":
    main()
