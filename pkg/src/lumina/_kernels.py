"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles straightforward loops; the numpy backend
uses stride tricks + BLAS. Both produce the same values up to summation
order. Selection happens once at import:

    LUMINA_NUMBA=0  force the pure-numpy path
    LUMINA_NUMBA=1  require numba (ImportError if unavailable)

unset: numba when importable, numpy otherwise. ``USING_NUMBA`` reports
the active backend; ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FLAG = os.environ.get("LUMINA_NUMBA", "").strip().lower()

if _FLAG in ("0", "false", "off", "no"):
    _HAVE_NUMBA = False
else:
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _FLAG in ("1", "true", "on", "yes"):
            raise
        _HAVE_NUMBA = False

USING_NUMBA = _HAVE_NUMBA


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def corr2_valid_np(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-region 2-D cross-correlation of a single plane."""
    windows = sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", windows, kernel, optimize=True)


def conv3x3_fwd_np(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    c, h, wd = x.shape
    xp = np.zeros((c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    windows = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (C,H,W,3,3)
    y = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4]))  # (O,H,W)
    return y + b[:, None, None]


def conv3x3_bwd_np(x, w, gout):
    c, h, wd = x.shape
    xp = np.zeros((c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    windows = sliding_window_view(xp, (3, 3), axis=(1, 2))
    gw = np.tensordot(gout, windows, axes=([1, 2], [1, 2]))  # (O,C,3,3)
    gb = gout.sum(axis=(1, 2))
    # grad wrt input: correlate padded gout with spatially flipped, transposed w
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = conv3x3_fwd_np(gout, wt, np.zeros(c, dtype=x.dtype))
    return gx, gw, gb


def maxpool2_fwd_np(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, : h2 * 2, : w2 * 2].reshape(c, h2, 2, w2, 2)
    return v.max(axis=(2, 4))


def maxpool2_bwd_np(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    h2, w2 = gout.shape[1], gout.shape[2]
    gx = np.zeros_like(x)
    v = x[:, : h2 * 2, : w2 * 2].reshape(c, h2, 2, w2, 2)
    flat = v.transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    # ties: first maximum in row-major window order receives the gradient
    idx = flat.argmax(axis=3)
    di, dj = idx // 2, idx % 2
    ci, hi, wi = np.meshgrid(
        np.arange(c), np.arange(h2), np.arange(w2), indexing="ij"
    )
    gx[ci, hi * 2 + di, wi * 2 + dj] = gout
    return gx


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _corr2_valid_nb(img, kernel):
        kh, kw = kernel.shape
        oh = img.shape[0] - kh + 1
        ow = img.shape[1] - kw + 1
        out = np.zeros((oh, ow), dtype=np.float64)
        for a in range(kh):
            for bb in range(kw):
                kv = kernel[a, bb]
                for i in range(oh):
                    for j in range(ow):
                        out[i, j] += kv * img[i + a, j + bb]
        return out

    @njit(cache=True, nogil=True)
    def _im2col3(x):
        c, h, wd = x.shape
        xp = np.zeros((c, h + 2, wd + 2), dtype=np.float64)
        xp[:, 1:-1, 1:-1] = x
        col = np.empty((c * 9, h * wd), dtype=np.float64)
        for cc in range(c):
            for a in range(3):
                for bb in range(3):
                    row = (cc * 3 + a) * 3 + bb
                    for i in range(h):
                        base = i * wd
                        for j in range(wd):
                            col[row, base + j] = xp[cc, i + a, j + bb]
        return col

    @njit(cache=True, nogil=True)
    def _conv3x3_fwd_nb(x, w, b):
        c, h, wd = x.shape
        o = w.shape[0]
        col = _im2col3(x)
        w2 = np.ascontiguousarray(w.reshape(o, c * 9))
        y = np.dot(w2, col).reshape(o, h, wd)
        for oo in range(o):
            y[oo] += b[oo]
        return y

    @njit(cache=True, nogil=True)
    def _conv3x3_bwd_nb(x, w, gout):
        c, h, wd = x.shape
        o = w.shape[0]
        col = _im2col3(x)
        g2 = np.ascontiguousarray(gout.reshape(o, h * wd))
        gw = np.dot(g2, col.T).reshape(o, c, 9).copy().reshape(o, c, 3, 3)
        gb = np.empty(o, dtype=np.float64)
        for oo in range(o):
            gb[oo] = g2[oo].sum()
        # grad wrt input: scatter col-space gradient back through im2col
        w2 = np.ascontiguousarray(w.reshape(o, c * 9))
        gcol = np.dot(w2.T, g2)  # (c*9, h*wd)
        gxp = np.zeros((c, h + 2, wd + 2), dtype=np.float64)
        for cc in range(c):
            for a in range(3):
                for bb in range(3):
                    row = (cc * 3 + a) * 3 + bb
                    for i in range(h):
                        base = i * wd
                        for j in range(wd):
                            gxp[cc, i + a, j + bb] += gcol[row, base + j]
        gx = np.ascontiguousarray(gxp[:, 1 : h + 1, 1 : wd + 1])
        return gx, gw, gb

    @njit(cache=True, nogil=True)
    def _maxpool2_fwd_nb(x):
        c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        y = np.empty((c, h2, w2), dtype=np.float64)
        for cc in range(c):
            for i in range(h2):
                for j in range(w2):
                    m = x[cc, 2 * i, 2 * j]
                    if x[cc, 2 * i, 2 * j + 1] > m:
                        m = x[cc, 2 * i, 2 * j + 1]
                    if x[cc, 2 * i + 1, 2 * j] > m:
                        m = x[cc, 2 * i + 1, 2 * j]
                    if x[cc, 2 * i + 1, 2 * j + 1] > m:
                        m = x[cc, 2 * i + 1, 2 * j + 1]
                    y[cc, i, j] = m
        return y

    @njit(cache=True, nogil=True)
    def _maxpool2_bwd_nb(x, gout):
        c, h, w = x.shape
        h2, w2 = gout.shape[1], gout.shape[2]
        gx = np.zeros((c, h, w), dtype=np.float64)
        for cc in range(c):
            for i in range(h2):
                for j in range(w2):
                    bi, bj = 2 * i, 2 * j
                    m = x[cc, 2 * i, 2 * j]
                    if x[cc, 2 * i, 2 * j + 1] > m:
                        m = x[cc, 2 * i, 2 * j + 1]
                        bi, bj = 2 * i, 2 * j + 1
                    if x[cc, 2 * i + 1, 2 * j] > m:
                        m = x[cc, 2 * i + 1, 2 * j]
                        bi, bj = 2 * i + 1, 2 * j
                    if x[cc, 2 * i + 1, 2 * j + 1] > m:
                        bi, bj = 2 * i + 1, 2 * j + 1
                    gx[cc, bi, bj] += gout[cc, i, j]
        return gx


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def corr2_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if USING_NUMBA:
        return _corr2_valid_nb(_c(img), _c(kernel))
    return corr2_valid_np(img, kernel)


def corr2_scatter(valid_map: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of ``corr2_valid``: spread a valid-region map back to full size.

    out[p] = sum_q kernel[p - q] * valid_map[q]  (full 2-D convolution).
    """
    kh, kw = kernel.shape
    padded = np.zeros(
        (valid_map.shape[0] + 2 * (kh - 1), valid_map.shape[1] + 2 * (kw - 1)),
        dtype=np.float64,
    )
    padded[kh - 1 : kh - 1 + valid_map.shape[0], kw - 1 : kw - 1 + valid_map.shape[1]] = valid_map
    return corr2_valid(padded, kernel[::-1, ::-1])


def conv3x3_fwd(x, w, b):
    if USING_NUMBA:
        return _conv3x3_fwd_nb(_c(x), _c(w), _c(b))
    return conv3x3_fwd_np(x, w, b)


def conv3x3_bwd(x, w, gout):
    if USING_NUMBA:
        return _conv3x3_bwd_nb(_c(x), _c(w), _c(gout))
    return conv3x3_bwd_np(x, w, gout)


def maxpool2_fwd(x):
    if USING_NUMBA:
        return _maxpool2_fwd_nb(_c(x))
    return maxpool2_fwd_np(x)


def maxpool2_bwd(x, gout):
    if USING_NUMBA:
        return _maxpool2_bwd_nb(_c(x), _c(gout))
    return maxpool2_bwd_np(x, gout)
