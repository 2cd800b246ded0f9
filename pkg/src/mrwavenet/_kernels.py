"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time from ``MRWAVENET_BACKEND``
(``numba`` or ``numpy``). When numba is requested but cannot be imported the
numpy path is used silently. Both paths are deterministic and agree to
rounding error; ``tests/test_kernels.py`` checks that.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_REQUESTED = os.environ.get("MRWAVENET_BACKEND", "numba").strip().lower()

try:
    if _REQUESTED == "numpy":
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# grouped 1-D convolution (cross-correlation, valid padding)
# ---------------------------------------------------------------------------

def _windows(x, k, stride):
    # (B, Cin, Lout, k) view, no copy
    return sliding_window_view(x, k, axis=2)[:, :, ::stride, :]


def conv1d_forward_numpy(x, w, stride, groups):
    B, cin, _ = x.shape
    cout, cin_g, k = w.shape
    cols = _windows(x, k, stride)
    lout = cols.shape[2]
    if groups == 1:
        # (B, Lout, Cout) via BLAS
        out = np.tensordot(cols, w, axes=([1, 3], [1, 2]))
        return np.ascontiguousarray(out.transpose(0, 2, 1))
    cout_g = cout // groups
    if cin_g == 1 and cout_g == 1:
        return np.einsum("bclk,ck->bcl", cols, w[:, 0, :])
    cols_g = cols.reshape(B, groups, cin_g, lout, k)
    w_g = w.reshape(groups, cout_g, cin_g, k)
    out = np.einsum("bgclk,gock->bgol", cols_g, w_g)
    return out.reshape(B, cout, lout)


def conv1d_backward_numpy(x, w, dy, stride, groups):
    B, cin, L = x.shape
    cout, cin_g, k = w.shape
    lout = dy.shape[2]
    cols = _windows(x, k, stride)
    cout_g = cout // groups
    dx = np.zeros_like(x)
    if groups == 1:
        dw = np.tensordot(dy, cols, axes=([0, 2], [0, 2]))
        for j in range(k):
            # contribution of tap j: dx[:, c, j + s*l] += sum_o w[o, c, j] dy[:, o, l]
            dx[:, :, j:j + stride * lout:stride] += np.tensordot(
                w[:, :, j], dy, axes=([0], [1])).transpose(1, 0, 2)
        return dx, dw
    if cin_g == 1 and cout_g == 1:
        dw = np.einsum("bcl,bclk->ck", dy, cols)[:, None, :]
        for j in range(k):
            dx[:, :, j:j + stride * lout:stride] += dy * w[None, :, 0, j, None]
        return dx, dw
    cols_g = cols.reshape(B, groups, cin_g, lout, k)
    dy_g = dy.reshape(B, groups, cout_g, lout)
    w_g = w.reshape(groups, cout_g, cin_g, k)
    dw = np.einsum("bgol,bgclk->gock", dy_g, cols_g).reshape(cout, cin_g, k)
    dx_g = dx.reshape(B, groups, cin_g, L)
    for j in range(k):
        dx_g[:, :, :, j:j + stride * lout:stride] += np.einsum(
            "goc,bgol->bgcl", w_g[:, :, :, j], dy_g)
    return dx, dw


if HAVE_NUMBA:

    @njit(cache=True)
    def _depthwise_forward_nb(x, w, stride):
        B, C, L = x.shape
        k = w.shape[2]
        lout = (L - k) // stride + 1
        out = np.zeros((B, C, lout), dtype=x.dtype)
        for b in range(B):
            for c in range(C):
                for t in range(lout):
                    acc = 0.0
                    for j in range(k):
                        acc += w[c, 0, j] * x[b, c, t * stride + j]
                    out[b, c, t] = acc
        return out

    @njit(cache=True)
    def _depthwise_backward_nb(x, w, dy, stride):
        B, C, L = x.shape
        k = w.shape[2]
        lout = dy.shape[2]
        dx = np.zeros_like(x)
        dw = np.zeros_like(w)
        for b in range(B):
            for c in range(C):
                for j in range(k):
                    wv = w[c, 0, j]
                    acc = 0.0
                    for t in range(lout):
                        acc += dy[b, c, t] * x[b, c, t * stride + j]
                        dx[b, c, t * stride + j] += wv * dy[b, c, t]
                    dw[c, 0, j] += acc
        return dx, dw

    @njit(cache=True)
    def _im2col_nb(x, b, c0, cin_g, k, stride, lout):
        cols = np.empty((cin_g * k, lout), dtype=x.dtype)
        for c in range(cin_g):
            for j in range(k):
                row = c * k + j
                for t in range(lout):
                    cols[row, t] = x[b, c0 + c, t * stride + j]
        return cols

    @njit(cache=True)
    def _conv1d_forward_nb(x, w, stride, groups):
        B, cin, L = x.shape
        cout, cin_g, k = w.shape
        lout = (L - k) // stride + 1
        cout_g = cout // groups
        out = np.empty((B, cout, lout), dtype=x.dtype)
        for g in range(groups):
            wg = np.ascontiguousarray(w[g * cout_g:(g + 1) * cout_g].reshape(cout_g, cin_g * k))
            for b in range(B):
                cols = _im2col_nb(x, b, g * cin_g, cin_g, k, stride, lout)
                out[b, g * cout_g:(g + 1) * cout_g] = np.dot(wg, cols)
        return out

    @njit(cache=True)
    def _conv1d_backward_nb(x, w, dy, stride, groups):
        B, cin, L = x.shape
        cout, cin_g, k = w.shape
        lout = dy.shape[2]
        cout_g = cout // groups
        dx = np.zeros_like(x)
        dw = np.zeros((cout, cin_g * k), dtype=x.dtype)
        for g in range(groups):
            o0 = g * cout_g
            c0 = g * cin_g
            wg = np.ascontiguousarray(w[o0:o0 + cout_g].reshape(cout_g, cin_g * k))
            wgt = np.ascontiguousarray(wg.T)
            for b in range(B):
                cols = _im2col_nb(x, b, c0, cin_g, k, stride, lout)
                dyb = np.ascontiguousarray(dy[b, o0:o0 + cout_g])
                dw[o0:o0 + cout_g] += np.dot(dyb, np.ascontiguousarray(cols.T))
                dcols = np.dot(wgt, dyb)
                for c in range(cin_g):
                    for j in range(k):
                        row = c * k + j
                        for t in range(lout):
                            dx[b, c0 + c, t * stride + j] += dcols[row, t]
        return dx, dw.reshape(cout, cin_g, k)

    def conv1d_forward_numba(x, w, stride, groups):
        if w.shape[1] == 1 and w.shape[0] == groups:
            return _depthwise_forward_nb(np.ascontiguousarray(x), np.ascontiguousarray(w),
                                         stride)
        return _conv1d_forward_nb(np.ascontiguousarray(x), np.ascontiguousarray(w),
                                  stride, groups)

    def conv1d_backward_numba(x, w, dy, stride, groups):
        if w.shape[1] == 1 and w.shape[0] == groups:
            return _depthwise_backward_nb(np.ascontiguousarray(x), np.ascontiguousarray(w),
                                          np.ascontiguousarray(dy), stride)
        return _conv1d_backward_nb(np.ascontiguousarray(x), np.ascontiguousarray(w),
                                   np.ascontiguousarray(dy), stride, groups)


# ---------------------------------------------------------------------------
# column-wise empirical CDF tails
# ---------------------------------------------------------------------------

def ecdf_tails_numpy(X):
    """Left and right ECDF values of every entry against its own column."""
    M = X.shape[0]
    order = np.sort(X, axis=0)
    left = np.empty_like(X, dtype=np.float64)
    right = np.empty_like(X, dtype=np.float64)
    for j in range(X.shape[1]):
        col = order[:, j]
        left[:, j] = np.searchsorted(col, X[:, j], side="right")
        right[:, j] = M - np.searchsorted(col, X[:, j], side="left")
    return left / M, right / M


if HAVE_NUMBA:

    @njit(cache=True)
    def _ecdf_tails_nb(X):
        M, p = X.shape
        left = np.empty((M, p))
        right = np.empty((M, p))
        for j in range(p):
            col = np.sort(X[:, j])
            for i in range(M):
                v = X[i, j]
                left[i, j] = np.searchsorted(col, v, side="right")
                right[i, j] = M - np.searchsorted(col, v, side="left")
        return left / M, right / M

    def ecdf_tails_numba(X):
        return _ecdf_tails_nb(np.ascontiguousarray(X, dtype=np.float64))


def _select(name):
    if HAVE_NUMBA:
        return globals()[f"{name}_numba"]
    return globals()[f"{name}_numpy"]


conv1d_forward = _select("conv1d_forward")
conv1d_backward = _select("conv1d_backward")
ecdf_tails = _select("ecdf_tails")
