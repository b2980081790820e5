"""Hot loops for the tensor engine, compiled with numba.

Everything here is memory-bound bookkeeping (patch gather/scatter,
pooling, fused optimizer updates) plus two special-cased single-input-
channel convolution kernels; the arithmetic-heavy contractions stay in
BLAS via numpy matmul. Layouts are NHWC, so one (kernel-row, all
channels) block of a patch is a single contiguous slice copy.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, kh, kw, sh, sw, oh, ow, col, row0):
    """Gather kernel patches of a padded NHWC tensor into GEMM rows.

    xp: (B, Hp, Wp, C) padded input; col rows ``row0 + b*oh*ow + ...``
    receive the (kh*kw*C)-wide patches, so callers can fill a large
    column matrix in batch chunks. Each kernel row is one contiguous
    slice of kw*C values.
    """
    B, Hp, Wp, C = xp.shape
    x2 = xp.reshape(B, Hp, Wp * C)
    for b in range(B):
        for i in range(oh):
            base_r = row0 + (b * oh + i) * ow
            for j in range(ow):
                r = base_r + j
                jb = j * sw * C
                c0 = 0
                for di in range(kh):
                    src = x2[b, i * sh + di]
                    for t in range(kw * C):
                        col[r, c0 + t] = src[jb + t]
                    c0 += kw * C
    return col


@njit(cache=True)
def col2im_add(col, kh, kw, sh, sw, h, w, yp):
    """Scatter-add GEMM rows back into a (padded) NHWC frame.

    Adjoint of :func:`im2col` over an h*w grid of anchor positions with
    the given strides; used to materialise transposed convolutions.
    """
    B, Hp, Wp, C = yp.shape
    y2 = yp.reshape(B, Hp, Wp * C)
    for b in range(B):
        for i in range(h):
            base_r = (b * h + i) * w
            for j in range(w):
                r = base_r + j
                jb = j * sw * C
                c0 = 0
                for di in range(kh):
                    dst = y2[b, i * sh + di]
                    for t in range(kw * C):
                        dst[jb + t] += col[r, c0 + t]
                    c0 += kw * C


@njit(cache=True, fastmath=True)
def conv_cin1_fwd(xp, w, b, sh, sw, y):
    """Direct convolution for a single input channel (first layers).

    xp: (B, Hp, Wp) padded, w: (kh, kw, Co), y: (B, oh, ow, Co). BLAS is
    inefficient at the K=kh*kw GEMM this would otherwise become.
    """
    B, oh, ow, Co = y.shape
    kh, kw, _ = w.shape
    for bb in range(B):
        for i in range(oh):
            for j in range(ow):
                yb = y[bb, i, j]
                for ch in range(Co):
                    yb[ch] = b[ch]
                for di in range(kh):
                    row = xp[bb, i * sh + di]
                    for dj in range(kw):
                        v = row[j * sw + dj]
                        wd = w[di, dj]
                        for ch in range(Co):
                            yb[ch] += v * wd[ch]
    return y


@njit(cache=True, fastmath=True)
def conv_cin1_dw(xp, dy, sh, sw, dw, db):
    """Weight/bias gradient matching :func:`conv_cin1_fwd`."""
    B, oh, ow, Co = dy.shape
    kh, kw, _ = dw.shape
    dw[:] = 0.0
    db[:] = 0.0
    for bb in range(B):
        for i in range(oh):
            for j in range(ow):
                g = dy[bb, i, j]
                for ch in range(Co):
                    db[ch] += g[ch]
                for di in range(kh):
                    row = xp[bb, i * sh + di]
                    for dj in range(kw):
                        v = row[j * sw + dj]
                        wd = dw[di, dj]
                        for ch in range(Co):
                            wd[ch] += v * g[ch]


@njit(cache=True)
def maxpool_fwd(xp, kh, kw, sh, sw, y, arg):
    """Max pooling over a padded NHWC tensor, recording window argmax."""
    B, oh, ow, C = y.shape
    for b in range(B):
        for i in range(oh):
            for j in range(ow):
                ybase = y[b, i, j]
                abase = arg[b, i, j]
                first = xp[b, i * sh, j * sw]
                for ch in range(C):
                    ybase[ch] = first[ch]
                    abase[ch] = 0
                for di in range(kh):
                    row = xp[b, i * sh + di]
                    for dj in range(kw):
                        if di == 0 and dj == 0:
                            continue
                        src = row[j * sw + dj]
                        code = di * kw + dj
                        for ch in range(C):
                            v = src[ch]
                            if v > ybase[ch]:
                                ybase[ch] = v
                                abase[ch] = code
    return y


@njit(cache=True)
def maxpool_bwd(dy, arg, kh, kw, sh, sw, dxp):
    """Scatter-add gradients to the argmax positions (padded frame)."""
    B, oh, ow, C = dy.shape
    for b in range(B):
        for i in range(oh):
            for j in range(ow):
                dbase = dy[b, i, j]
                abase = arg[b, i, j]
                for ch in range(C):
                    a = abase[ch]
                    di = a // kw
                    dj = a % kw
                    dxp[b, i * sh + di, j * sw + dj, ch] += dbase[ch]
    return dxp


@njit(cache=True, fastmath=True)
def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """Fused Adam step on flat arrays: moments, bias correction, update."""
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)
