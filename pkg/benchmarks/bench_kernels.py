"""Time each hot kernel as compiled loops (numba) and as plain numpy.

    python3 benchmarks/bench_kernels.py [--repeat N]

Compilation happens once before timing.  Prints one row per kernel with the
best-of-N wall time of both variants and the speedup.
"""

import argparse
import timeit

import numpy as np

from safeabr import _accel
from safeabr.kernels import LOOP_KERNELS, NUMPY_KERNELS


def cases():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((500, 60))
    sv = rng.standard_normal((120, 60))
    coef = rng.random(120)
    K = NUMPY_KERNELS["rbf_gram"](rng.standard_normal((400, 8)), 0.1)
    C = 1 / (0.1 * 400)
    a0 = np.zeros(400)
    a0[:40] = C
    times = np.arange(1200, dtype=float)
    rates = np.maximum(rng.gamma(2, 2, 1200), 0.01)
    x = rng.gamma(2, 2, 240)
    W = [rng.standard_normal(s) for s in ((32, 19), (32,), (32, 32), (32,), (6, 32), (6,))]
    f = rng.standard_normal(19)
    return {
        "transfer_time": lambda k: k(times, rates, 1200.0, 17.3, 400.0),
        "rbf_decision": lambda k: k(X[:1], sv, coef, 0.02, 0.1),
        "rbf_gram": lambda k: k(X, 0.02),
        "smo_one_class": lambda k: k(K, a0.copy(), C, 1e-4, 100000),
        "window_mean_std": lambda k: k(x, 10),
        "mlp_forward": lambda k: k(f, *W),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<16} {'numba':>12} {'numpy':>12} {'speedup':>8}")
    for name, call in cases().items():
        fast = _accel.njit(LOOP_KERNELS[name])
        call(fast)
        slow = NUMPY_KERNELS[name]
        number = 20 if name != "smo_one_class" else 1
        t_fast = min(timeit.repeat(lambda: call(fast), number=number, repeat=args.repeat)) / number
        t_slow = min(timeit.repeat(lambda: call(slow), number=number, repeat=args.repeat)) / number
        print(f"{name:<16} {t_fast * 1e6:>10.1f}us {t_slow * 1e6:>10.1f}us {t_slow / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
