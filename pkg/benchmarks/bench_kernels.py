#!/usr/bin/env python3
"""Time the numba kernel path against the pure-numpy fallback.

Shapes mirror a real training step of the default full-size model
(batch 16, 48 joints, 256 hidden channels) plus the Adam update over a
parameter tensor and the squared-norm reduction used for clipping. Both
paths are checked against each other to roundoff before timing.

Run:  python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from motionpred import kernels


def _time(fn, repeats):
    fn()                                  # warm-up (JIT compile on first call)
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - start) / repeats)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if "numba" not in kernels.IMPLEMENTATIONS:
        raise SystemExit("numba backend unavailable; nothing to compare")

    rng = np.random.default_rng(0)
    b, k, h = 16, 48, 256
    x = rng.normal(size=(b, k, h))
    gamma = rng.uniform(0.5, 1.5, size=(k, h))
    beta = rng.normal(size=(k, h))
    g3 = rng.normal(size=(b, k, h))
    y_flat = np.tanh(rng.normal(size=b * k * h))
    g_flat = rng.normal(size=b * k * h)
    p = rng.normal(size=k * h)
    grad = rng.normal(size=k * h)

    np_impl = kernels.IMPLEMENTATIONS["numpy"]
    nb_impl = kernels.IMPLEMENTATIONS["numba"]

    _, xhat, inv_std, _, _ = np_impl["batchnorm_fwd"](x, gamma, beta, 1e-5)

    cases = {
        "batchnorm_fwd (16x48x256)": (
            lambda impl: impl["batchnorm_fwd"](x, gamma, beta, 1e-5),
            lambda out: out[0]),
        "batchnorm_bwd (16x48x256)": (
            lambda impl: impl["batchnorm_bwd"](g3, xhat, inv_std, gamma),
            lambda out: out[0]),
        "tanh_bwd (196k)": (
            lambda impl: impl["tanh_bwd"](g_flat, y_flat),
            lambda out: out),
        "sq_sum (196k)": (
            lambda impl: impl["sq_sum"](g_flat),
            lambda out: np.asarray(out)),
    }

    print(f"{'kernel':34s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name, (call, pick) in cases.items():
        ref = pick(call(np_impl))
        got = pick(call(nb_impl))
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)
        t_np = _time(lambda: call(np_impl), args.repeats)
        t_nb = _time(lambda: call(nb_impl), args.repeats)
        print(f"{name:34s} {t_np * 1e6:10.1f}us {t_nb * 1e6:10.1f}us "
              f"{t_np / t_nb:8.2f}x")

    # adam mutates state; compare trajectories first, then time fresh copies
    p1, m1, v1 = p.copy(), np.zeros_like(p), np.zeros_like(p)
    p2, m2, v2 = p.copy(), np.zeros_like(p), np.zeros_like(p)
    for step in range(1, 4):
        np_impl["adam_update"](p1, grad, m1, v1, step, 1e-3, 0.9, 0.999, 1e-8)
        nb_impl["adam_update"](p2, grad, m2, v2, step, 1e-3, 0.9, 0.999, 1e-8)
    np.testing.assert_allclose(p2, p1, rtol=1e-12)

    m, v = np.zeros_like(p), np.zeros_like(p)
    t_np = _time(lambda: np_impl["adam_update"](p.copy(), grad, m, v, 1,
                                                1e-3, 0.9, 0.999, 1e-8),
                 args.repeats)
    t_nb = _time(lambda: nb_impl["adam_update"](p.copy(), grad, m, v, 1,
                                                1e-3, 0.9, 0.999, 1e-8),
                 args.repeats)
    print(f"{'adam_update (12k params)':34s} {t_np * 1e6:10.1f}us "
          f"{t_nb * 1e6:10.1f}us {t_np / t_nb:8.2f}x")
    print(f"\nactive backend for the library: {kernels.ACTIVE_BACKEND}")


if __name__ == "__main__":
    main()
