"""Benchmark the numba and numpy conv kernels on training-shaped workloads.

Run:  python3 benchmarks/bench_kernels.py [reps]

Prints per-kernel timings for both backends plus a composite denoiser-block
round trip (forward + both gradients), inside the same single-threaded BLAS
regime the trainer uses.
"""

import sys
import time

import numpy as np

from latentspec import kernels

REPS = int(sys.argv[1]) if len(sys.argv) > 1 else 30

SHAPES = [
    # (label, B, Ci, Co, T, K, dilation)
    ("block conv  ", 16, 48, 48, 256, 3, 4),
    ("block conv d32", 16, 48, 48, 256, 3, 32),
    ("channel mix ", 16, 48, 48, 256, 1, 1),
    ("input proj  ", 16, 48, 48, 256, 1, 1),
    ("sampler conv", 1, 48, 48, 256, 3, 4),
]


def timeit(fn, reps=REPS):
    fn()  # warm / compile
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        best = min(best, (time.perf_counter() - t0) / reps)
    return best * 1e3


def main():
    rng = np.random.default_rng(0)
    print(f"backend default: {kernels.backend_name()}")
    with kernels.single_thread_blas():
        print(f"{'kernel':<16} {'shape':<24} {'numba ms':>9} {'numpy ms':>9} {'ratio':>6}")
        for label, B, Ci, Co, T, K, dil in SHAPES:
            x = rng.standard_normal((B, Ci, T))
            w = rng.standard_normal((Co, Ci, K))
            g = rng.standard_normal((B, Co, T))
            for op, fn in [
                ("fwd", lambda be: kernels.conv1d_forward(x, w, dil, backend=be)),
                ("grad_in", lambda be: kernels.conv1d_grad_input(g, w, dil, backend=be)),
                ("grad_w", lambda be: kernels.conv1d_grad_weight(g, x, K, dil, backend=be)),
            ]:
                t_nb = timeit(lambda: fn("numba"))
                t_np = timeit(lambda: fn("numpy"))
                shape = f"B{B} {Ci}->{Co} T{T} K{K} d{dil}"
                print(f"{label}/{op:<8} {shape:<24} {t_nb:9.3f} {t_np:9.3f} {t_np/t_nb:6.2f}")
        a = rng.standard_normal((16, 48, 256))
        sig = np.tanh(a * 0.5) * 0.5 + 0.5
        gs = rng.standard_normal(a.shape)
        t_nb = timeit(lambda: kernels.silu_backward(gs, a, sig, backend="numba"))
        t_np = timeit(lambda: kernels.silu_backward(gs, a, sig, backend="numpy"))
        print(f"{'silu/bwd':<25} {'(16,48,256)':<15} {t_nb:9.3f} {t_np:9.3f} {t_np/t_nb:6.2f}")


if __name__ == "__main__":
    main()
