#!/usr/bin/env python3
"""Compare the numba and pure-numpy kernel backends.

Times the three conv kernels across training-relevant shapes, the Jacobi
sweep across matrix sizes, and one full training step of the mid-size
network. Run directly:

    python benchmarks/bench_kernels.py

The active package backend is irrelevant here; both implementations are
imported explicitly.
"""

import time

import numpy as np

from convspec import _kernels_numpy as k_np
from convspec.tensor import make_rng

try:
    from convspec import _kernels_numba as k_nb
except ImportError:
    k_nb = None

CONV_SHAPES = [
    # batch, c_in, hw, k, d_out, stride
    (64, 8, 12, 3, 8, 1),
    (64, 16, 6, 3, 16, 1),
    (64, 16, 12, 1, 16, 1),
    (64, 16, 12, 3, 32, 2),
    (64, 64, 6, 3, 64, 1),
    (16, 64, 8, 3, 64, 1),
]

JACOBI_SHAPES = [(8, 8), (32, 32), (64, 64), (128, 128)]


def timeit(fn, *args, min_time=0.3):
    fn(*args)  # warm (and jit-compile)
    reps = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(reps):
            fn(*args)
        dt = time.perf_counter() - t0
        if dt >= min_time or reps >= 4096:
            return dt / reps
        reps *= 4


def bench_convs():
    rng = make_rng(0)
    print(f"{'conv shape':34s} {'kernel':12s} {'numba':>10s} {'numpy':>10s} {'ratio':>7s}")
    for b, c, hw, k, d, s in CONV_SHAPES:
        x = rng.normal(size=(b, c, hw, hw))
        w = rng.normal(size=(k, k, d, c))
        oh = -(-hw // s)
        pt = max((oh - 1) * s + k - hw, 0) // 2
        dy = rng.normal(size=(b, d, oh, oh))
        label = f"B{b} C{c} {hw}x{hw} k{k} D{d} s{s}"
        jobs = [
            ("forward", lambda m: m.conv2d_forward(x, w, s, pt, pt, oh, oh, False)),
            ("weight_grad", lambda m: m.conv2d_weight_grad(dy, x, k, s, pt, pt, False)),
            ("input_grad", lambda m: m.conv2d_input_grad(dy, w, s, pt, pt, hw, hw, False)),
        ]
        for name, job in jobs:
            t_np = timeit(job, k_np)
            if k_nb is not None:
                t_nb = timeit(job, k_nb)
                print(f"{label:34s} {name:12s} {t_nb * 1e3:9.2f}ms {t_np * 1e3:9.2f}ms "
                      f"{t_nb / t_np:6.2f}x")
            else:
                print(f"{label:34s} {name:12s} {'n/a':>10s} {t_np * 1e3:9.2f}ms")


def bench_jacobi():
    rng = make_rng(1)
    print(f"\n{'jacobi svd':34s} {'':12s} {'numba':>10s} {'numpy':>10s} {'ratio':>7s}")
    for rows, cols in JACOBI_SHAPES:
        m = rng.normal(size=(rows, cols)) + 1j * rng.normal(size=(rows, cols))

        def run(mod):
            at = np.ascontiguousarray(m.T.copy())
            vt = np.eye(cols, dtype=np.complex128)
            mod.jacobi_sweeps(at, vt, True, 1e-13, 64)

        t_np = timeit(run, k_np)
        label = f"{rows}x{cols} complex"
        if k_nb is not None:
            t_nb = timeit(run, k_nb)
            print(f"{label:34s} {'sweeps':12s} {t_nb * 1e3:9.2f}ms {t_np * 1e3:9.2f}ms "
                  f"{t_nb / t_np:6.2f}x")
        else:
            print(f"{label:34s} {'sweeps':12s} {'n/a':>10s} {t_np * 1e3:9.2f}ms")


def bench_train_step():
    import os
    import subprocess
    import sys
    import textwrap

    print("\nfull training step (resnet L=9, widths 8/16/32, batch 64, 12x12):")
    snippet = textwrap.dedent("""
        import time
        import numpy as np
        from convspec import backend
        from convspec.net import ArchSpec, build_network
        from convspec.tensor import make_rng
        net = build_network(ArchSpec(architecture='resnet', depth=9,
                                     widths=(8, 16, 32), input_size=12,
                                     classes=10), make_rng(0))
        x = make_rng(1).normal(size=(64, 3, 12, 12))
        y = make_rng(2).integers(0, 10, size=64)
        net.forward(x, y); net.backward()  # warm
        t0 = time.perf_counter()
        reps = 10
        for _ in range(reps):
            net.forward(x, y)
            net.backward()
        dt = (time.perf_counter() - t0) / reps
        print(f"  {backend.active_backend():6s}: {dt * 1e3:8.1f} ms/step")
    """)
    for mode in ("numba", "numpy"):
        env = dict(os.environ, CONVSPEC_BACKEND=mode)
        try:
            out = subprocess.run([sys.executable, "-c", snippet], env=env,
                                 capture_output=True, text=True, check=True)
            print(out.stdout, end="")
        except subprocess.CalledProcessError as exc:
            print(f"  {mode:6s}: failed ({exc.stderr.strip().splitlines()[-1]})")


if __name__ == "__main__":
    bench_convs()
    bench_jacobi()
    bench_train_step()
