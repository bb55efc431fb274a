"""Benchmark the compiled kernels against the pure-numpy fallbacks.

Run as: python3 benchmarks/bench_kernels.py [--sizes 1000,10000,100000]
"""

import argparse
import time

import numpy as np

from currstat.kernels import _numba, _numpy


def _time(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pava(n, rng):
    v = np.cumsum(rng.normal(size=n)) + rng.normal(scale=5.0, size=n)
    w = rng.uniform(0.5, 2.0, size=n)
    _numba.pava(v[:10], w[:10])  # JIT warmup
    t_nb = _time(_numba.pava, v, w)
    t_np = _time(_numpy.pava, v, w)
    assert np.allclose(_numba.pava(v, w), _numpy.pava(v, w))
    return t_nb, t_np


def bench_loglik(n, rng):
    u = rng.uniform(0.01, 3.0, size=n)
    delta = (rng.uniform(size=n) < 0.5).astype(np.float64)
    _numba.cs_loglik(u[:10], delta[:10])
    t_nb = _time(_numba.cs_loglik, u, delta)
    t_np = _time(_numpy.cs_loglik, u, delta)
    assert np.isclose(_numba.cs_loglik(u, delta), _numpy.cs_loglik(u, delta))
    return t_nb, t_np


def bench_cox(n, rng):
    p = 3
    X = rng.choice([-1.0, 1.0], size=(n, p))
    y = np.round(rng.weibull(0.75, size=n), 2) + 0.01
    times, gidx = np.unique(y, return_inverse=True)
    lam_true = times ** 0.75
    prob = 1.0 - np.exp(-lam_true[gidx] * np.exp(X @ np.array([-0.3, 0.15, 0.0])))
    delta = (rng.uniform(size=n) < prob).astype(np.float64)
    lam0 = np.full(len(times), 0.5)
    beta0 = np.zeros(p)
    args = (X, delta, gidx.astype(np.int64), lam0, beta0, 1e-9, 500, 1e-10)
    _numba.cox_fit(X[:8], delta[:8], np.arange(8), np.full(8, 0.5),
                   np.zeros(p), 1e-9, 2, 1e-10)  # JIT warmup
    t_nb = _time(_numba.cox_fit, *args, repeat=3)
    t_np = _time(_numpy.cox_fit, *args, repeat=3)
    b_nb = _numba.cox_fit(*args)[0]
    b_np = _numpy.cox_fit(*args)[0]
    assert np.allclose(b_nb, b_np, atol=1e-6)
    return t_nb, t_np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="1000,10000,100000")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12}{'n':>9}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>9}")
    for n in sizes:
        for name, fn in (("pava", bench_pava), ("cs_loglik", bench_loglik),
                         ("cox_fit", bench_cox)):
            if name == "cox_fit" and n > 20000:
                continue  # the numpy path is slow enough to skip at scale
            t_nb, t_np = fn(n, rng)
            print(f"{name:<12}{n:>9}{t_nb:>12.5f}{t_np:>12.5f}"
                  f"{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
