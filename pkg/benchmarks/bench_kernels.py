"""Benchmark the compiled kernel backend against the numpy fallback.

Usage: python benchmarks/bench_kernels.py
Pin BLAS to one thread for stable numbers (OMP_NUM_THREADS=1); at these
matrix sizes multithreaded BLAS adds sync overhead.
"""

import time

import numpy as np

from gaitmpc import _core_np
from gaitmpc.model import INPUT_DIM, init_model
from gaitmpc.state import HISTORY_LEN, STATE_DIM

try:
    from gaitmpc import _core
except ImportError:
    _core = None


def bench(fn, repeats=10):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def make_model(seed=1):
    rng = np.random.default_rng(seed)
    m = init_model(np.random.default_rng(seed + 1))
    m.in_std = 0.5 + rng.random(INPUT_DIM)
    m.out_std = 0.05 + 0.1 * rng.random(STATE_DIM)
    return m


def main():
    rng = np.random.default_rng(0)
    model = make_model()
    args = model.kernel_args()

    print(f"{'kernel':<38} {'cython':>10} {'numpy':>10} {'speedup':>8}")
    hist = rng.normal(0, 0.3, (HISTORY_LEN, STATE_DIM))
    hist[:, 14:] = rng.uniform(0, 6.28, (HISTORY_LEN, 4))
    phases = hist[-1, 14:].copy()

    for P, H in ((400, 75), (128, 50), (32, 25)):
        actions = rng.uniform(-0.5, 0.5, (P, H, 12))
        actions[:, :, 8:] = rng.uniform(0, 3, (P, H, 4))
        v_targets = np.linspace(0, 0.66, H)
        call = (hist, phases, actions, 0.0, 3.0, 6.28, True, 0.006,
                v_targets, 0, 0.0, 1.0, 0.001, 0.01)
        t_np = bench(lambda: _core_np.rollout_returns(*args, *call))
        if _core is not None:
            t_cy = bench(lambda: _core.rollout_returns(*args, *call))
            print(f"{f'rollout_returns P={P} H={H}':<38} {t_cy*1e3:9.2f}ms "
                  f"{t_np*1e3:9.2f}ms {t_np/t_cy:7.2f}x")
        else:
            print(f"{f'rollout_returns P={P} H={H}':<38} {'-':>10} {t_np*1e3:9.2f}ms")

    for B, n in ((256, 20), (128, 20), (512, 5)):
        hist0 = rng.normal(0, 0.3, (B, HISTORY_LEN, STATE_DIM))
        acts = rng.normal(0, 0.3, (B, n, 12))
        deltas = rng.normal(0, 0.02, (B, n, STATE_DIM))
        t_np = bench(lambda: _core_np.multistep_loss_grad(
            *args, hist0, acts, deltas, full_grad=True, want_grad=True), repeats=5)
        if _core is not None:
            t_cy = bench(lambda: _core.multistep_loss_grad(
                *args, hist0, acts, deltas, True, True), repeats=5)
            print(f"{f'multistep_loss_grad B={B} n={n}':<38} {t_cy*1e3:9.2f}ms "
                  f"{t_np*1e3:9.2f}ms {t_np/t_cy:7.2f}x")
        else:
            print(f"{f'multistep_loss_grad B={B} n={n}':<38} {'-':>10} {t_np*1e3:9.2f}ms")

    if _core is None:
        print("\ncompiled backend not available; showing fallback only")


if __name__ == "__main__":
    main()
