#!/usr/bin/env python3
"""Compare the numba and pure-numpy kernel backends on representative
problem sizes. Run directly:

    python benchmarks/bench_kernels.py

The active backend for the rest of the package is chosen at import time
by LUMINA_NUMBA (see lumina._kernels); this script always times both.
"""

import time

import numpy as np

from lumina import _kernels as K


def timeit(fn, n=20):
    fn()  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(n):
        fn()
    return (time.perf_counter() - t0) / n * 1000.0


def row(name, nb_fn, np_fn, check=None):
    if not K.USING_NUMBA:
        print(f"{name:<34}{'-':>10}{timeit(np_fn):>10.3f} ms   (numba backend unavailable)")
        return
    t_nb, t_np = timeit(nb_fn), timeit(np_fn)
    note = ""
    if check is not None:
        err = check()
        note = f"   max|diff| {err:.2e}"
    print(f"{name:<34}{t_nb:>9.3f} ms{t_np:>9.3f} ms   x{t_np / t_nb:5.2f}{note}")


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {'numba' if K.USING_NUMBA else 'numpy'}")
    print(f"{'kernel':<34}{'numba':>12}{'numpy':>12}   speedup")

    img = rng.random((256, 256))
    k11 = rng.random((11, 11))
    row(
        "corr2_valid 256x256 / 11x11",
        lambda: K._corr2_valid_nb(img, k11) if K.USING_NUMBA else None,
        lambda: K.corr2_valid_np(img, k11),
        lambda: np.abs(K._corr2_valid_nb(img, k11) - K.corr2_valid_np(img, k11)).max(),
    )

    x = rng.random((32, 64, 64))
    w = rng.random((32, 32, 3, 3))
    b = rng.random(32)
    g = rng.random((32, 64, 64))
    row(
        "conv3x3 fwd (32,64,64)->32",
        lambda: K._conv3x3_fwd_nb(x, w, b) if K.USING_NUMBA else None,
        lambda: K.conv3x3_fwd_np(x, w, b),
        lambda: np.abs(K._conv3x3_fwd_nb(x, w, b) - K.conv3x3_fwd_np(x, w, b)).max(),
    )
    row(
        "conv3x3 bwd (32,64,64)->32",
        lambda: K._conv3x3_bwd_nb(x, w, g) if K.USING_NUMBA else None,
        lambda: K.conv3x3_bwd_np(x, w, g),
        lambda: max(
            np.abs(a - c).max()
            for a, c in zip(K._conv3x3_bwd_nb(x, w, g), K.conv3x3_bwd_np(x, w, g))
        ),
    )

    xs = rng.random((3, 256, 256))
    ws = rng.random((16, 3, 3, 3))
    bs = rng.random(16)
    row(
        "conv3x3 fwd (3,256,256)->16",
        lambda: K._conv3x3_fwd_nb(xs, ws, bs) if K.USING_NUMBA else None,
        lambda: K.conv3x3_fwd_np(xs, ws, bs),
    )

    p = rng.random((64, 128, 128))
    gp = rng.random((64, 64, 64))
    row(
        "maxpool2 fwd (64,128,128)",
        lambda: K._maxpool2_fwd_nb(p) if K.USING_NUMBA else None,
        lambda: K.maxpool2_fwd_np(p),
        lambda: np.abs(K._maxpool2_fwd_nb(p) - K.maxpool2_fwd_np(p)).max(),
    )
    row(
        "maxpool2 bwd (64,128,128)",
        lambda: K._maxpool2_bwd_nb(p, gp) if K.USING_NUMBA else None,
        lambda: K.maxpool2_bwd_np(p, gp),
        lambda: np.abs(K._maxpool2_bwd_nb(p, gp) - K.maxpool2_bwd_np(p, gp)).max(),
    )


if __name__ == "__main__":
    main()
