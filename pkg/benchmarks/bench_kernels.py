"""Compare the numba and pure-numpy kernel backends.

Run: python3 benchmarks/bench_kernels.py --repeats 20
"""

import argparse
import time

import numpy as np

from tbcal.kernels import _numpy

try:
    from tbcal.kernels import _numba
except ImportError:  # pragma: no cover
    _numba = None

# eta_s, eta_i, M_p, b_p, M_s, b_s, M_i, b_i for a weak twin beam with long-tailed noise
ROW = (0.085, 0.086, 38.0, 0.16, 1.4e-3, 39.0, 5e-3, 24.0)


def timed(fn, repeats):
    fn()  # warm-up (and compilation for numba)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(impl, rng):
    rows, cols = impl.model_shape(*ROW, 1, 1, 1e-10, 512)
    f = impl.model_grid(*ROW, rows, cols, 1e-10)
    params = np.tile(np.array(ROW), (200, 1))
    params[:, 0] *= np.linspace(0.9, 1.1, 200)
    v_s = rng.gamma(0.5, 0.7, 200_000)
    v_i = v_s + rng.normal(0.0, 0.3, 200_000)
    dvs = np.linspace(0.05, 1.0, 50)
    return {
        "model_grid": lambda: impl.model_grid(*ROW, rows, cols, 1e-10),
        "declination_batch[200]": lambda: impl.declination_batch(f, params, 1e-10, 512),
        "covariance_grid[50x2e5]": lambda: impl.covariance_grid(v_s, v_i, dvs, 1.1 * dvs),
        "pair_grid[40x40]": lambda: impl.pair_grid(38.0, 0.16, 0.085, 0.086, 40, 40),
    }


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeats", type=int, default=10)
    args = p.parse_args()

    backends = [("numpy", _numpy)] + ([("numba", _numba)] if _numba is not None else [])
    results = {}
    for name, impl in backends:
        for case, fn in cases(impl, np.random.default_rng(0)).items():
            results[(name, case)] = timed(fn, args.repeats)

    case_names = list(cases(_numpy, np.random.default_rng(0)))
    print(f"{'kernel':26s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for case in case_names:
        t_np = results[("numpy", case)] * 1e3
        if _numba is None:
            print(f"{case:26s} {t_np:10.3f} {'n/a':>10s}")
            continue
        t_nb = results[("numba", case)] * 1e3
        print(f"{case:26s} {t_np:10.3f} {t_nb:10.3f} {t_np / max(t_nb, 1e-9):7.1f}x")


if __name__ == "__main__":
    main()
