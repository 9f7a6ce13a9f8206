"""Time the compiled kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20]

Each kernel is run once first so numba compilation is excluded from the
timings; the table reports the best-of-``repeat`` wall time per call.
"""

import argparse
import timeit

import numpy as np

from compsep import _kernels as K


def cases(rng):
    d = 50
    M = rng.standard_normal((d, d)) / np.sqrt(d)
    H = M @ M.T + 0.05 * np.eye(d)
    ev = np.linalg.eigvalsh(H)
    c = rng.standard_normal(d)
    agd = (H, c, np.zeros(d), float(ev[-1]), float(ev[0]), 1e-10, 10_000)

    X = rng.standard_normal((2000, 20))
    y = np.where(rng.random(2000) < 0.5, -1.0, 1.0)
    w = rng.standard_normal(20)
    logi = (X, y, w, 1.0 / 2000, 1e-2)

    S = M @ M.T
    power = (S, np.ones(d), 1e-12, 10_000)
    return [
        ("agd_quadratic d=50", K.agd_quadratic, K.py_agd_quadratic, agd),
        ("logistic_value n=2000", K.logistic_value, K.py_logistic_value, logi),
        ("logistic_grad n=2000", K.logistic_grad, K.py_logistic_grad, logi),
        ("logistic_hessian n=2000", K.logistic_hessian, K.py_logistic_hessian, logi),
        ("power_iteration d=50", K.power_iteration_psd, K.py_power_iteration_psd, power),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not K.NUMBA_ENABLED:
        print("numba disabled (COMPSEP_DISABLE_NUMBA set or numba missing); both columns are numpy")
    print(f"{'kernel':26s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, fast, slow, a in cases(np.random.default_rng(0)):
        fast(*a), slow(*a)  # warm-up / compile
        tf = min(timeit.repeat(lambda: fast(*a), number=1, repeat=args.repeat))
        ts = min(timeit.repeat(lambda: slow(*a), number=1, repeat=args.repeat))
        print(f"{name:26s} {1e3 * tf:11.3f} {1e3 * ts:11.3f} {ts / tf:7.1f}x")


if __name__ == "__main__":
    main()
