"""Differentiable tensor operations with hand-derived backward passes.

Activations are NHWC float arrays (float32 for training, float64 for the
finite-difference checks — every op follows the input dtype). Convolution
and transposed-convolution weights are (kh, kw, in_channels,
out_channels); dense weights are (in_features, out_features).

Contractions are im2col/col2im plus BLAS matmul:

* convolution forward gathers patches batch-chunk by batch-chunk (the
  column block then stays cache-resident for its GEMM);
* the convolution input gradient is a stride-1 convolution of the padded
  output gradient with the spatially flipped, channel-transposed kernel
  (no scatter);
* transposed convolution forward is one GEMM scattered by col2im; its
  backward gathers the output gradient once with a strided im2col and
  feeds both the weight and input gradient GEMMs.

Ops take an optional ``ws`` dict: a per-layer workspace reusing padded
frames, column blocks and output buffers across iterations. Training
loops run the same shapes every step, so this removes all large
allocations from the hot path. Borders of padded frames are written once
at allocation and never touched again.
"""

from __future__ import annotations

import numpy as np

from .kernels import (col2im_add, conv_cin1_dw, conv_cin1_fwd, im2col,
                      maxpool_bwd, maxpool_fwd)

# column blocks are gathered in batch chunks of roughly this many bytes
_CHUNK_BYTES = 16 << 20


class ShapeError(ValueError):
    pass


def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    out = (n + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"convolution output would be empty: in={n}, k={k}, "
            f"stride={stride}, padding={padding}"
        )
    return out


def _buf(ws, key, shape, dtype, fill=None):
    """Persistent workspace buffer; reallocated only on shape change."""
    if ws is None:
        arr = np.empty(shape, dtype=dtype)
        if fill is not None:
            arr.fill(fill)
        return arr
    arr = ws.get(key)
    if arr is None or arr.shape != shape or arr.dtype != dtype:
        arr = np.empty(shape, dtype=dtype)
        if fill is not None:
            arr.fill(fill)
        ws[key] = arr
    return arr


def _padded(ws, key, x, ph, pw, fill=0.0):
    """Copy x into a persistent padded frame (borders pre-filled)."""
    if ph == 0 and pw == 0:
        return np.ascontiguousarray(x)
    b, h, w, c = x.shape
    xp = _buf(ws, key, (b, h + 2 * ph, w + 2 * pw, c), x.dtype, fill=fill)
    xp[:, ph:ph + h, pw:pw + w, :] = x
    return xp


def _batch_chunk(per_sample_cols: int, kcols: int, itemsize: int, batch: int) -> int:
    rows = max(1, _CHUNK_BYTES // max(1, per_sample_cols * kcols * itemsize))
    return min(batch, rows)


def _gather_cols(ws, key, xp, kh, kw, sh, sw, oh, ow, gemm_into=None,
                 weight=None, keep=True):
    """im2col in batch chunks; optionally GEMM each chunk immediately.

    With ``keep`` the full column matrix is retained (needed for the
    weight gradient); chunking still helps cache locality of the GEMM.
    """
    b = xp.shape[0]
    kcols = kh * kw * xp.shape[3]
    rows_per_sample = oh * ow
    col = _buf(ws, key, (b * rows_per_sample, kcols), xp.dtype)
    chunk = _batch_chunk(rows_per_sample, kcols, xp.dtype.itemsize, b)
    for c0 in range(0, b, chunk):
        c1 = min(b, c0 + chunk)
        im2col(xp[c0:c1], kh, kw, sh, sw, oh, ow, col, c0 * rows_per_sample)
        if gemm_into is not None:
            np.matmul(col[c0 * rows_per_sample:c1 * rows_per_sample], weight,
                      out=gemm_into[c0 * rows_per_sample:c1 * rows_per_sample])
    return col


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv2d_forward(x, w, b, stride: int = 1, padding: int = 0, ws=None):
    """y[n,i,j,co] = sum x[n, i*s+di-p, j*s+dj-p, ci] * w[di,dj,ci,co] + b[co]"""
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv shapes incompatible: x{x.shape} w{w.shape}")
    kh, kw, ci, co = w.shape
    oh = _conv_out(x.shape[1], kh, stride, padding)
    ow = _conv_out(x.shape[2], kw, stride, padding)
    xp = _padded(ws, "xp", x, padding, padding)
    if ci == 1:
        # direct kernel: the K = kh*kw GEMM is too skinny for BLAS
        y = _buf(ws, "y", (x.shape[0], oh, ow, co), x.dtype)
        bias = b if b is not None else np.zeros(co, dtype=x.dtype)
        conv_cin1_fwd(xp[..., 0], np.ascontiguousarray(w[:, :, 0, :]),
                      bias.astype(x.dtype, copy=False), stride, stride, y)
        cache = (("cin1", xp), x.shape, w, stride, padding, ws)
        return y, cache
    y = _buf(ws, "y", (x.shape[0] * oh * ow, co), x.dtype)
    w2 = np.ascontiguousarray(w.reshape(-1, co))
    col = _gather_cols(ws, "col", xp, kh, kw, stride, stride, oh, ow,
                       gemm_into=y, weight=w2)
    if b is not None:
        y += b
    cache = (col, x.shape, w, stride, padding, ws)
    return y.reshape(x.shape[0], oh, ow, co), cache


def conv2d_backward(dy, cache, need_input_grad: bool = True):
    col, xshape, w, stride, padding, ws = cache
    kh, kw, ci, co = w.shape
    if isinstance(col, tuple) and col[0] == "cin1":
        xp = col[1]
        dw3 = np.empty((kh, kw, co), dtype=dy.dtype)
        db = np.empty(co, dtype=dy.dtype)
        conv_cin1_dw(xp[..., 0], np.ascontiguousarray(dy), stride, stride,
                     dw3, db)
        dw = dw3[:, :, None, :]
    else:
        dyf = np.ascontiguousarray(dy.reshape(-1, co))
        dw = np.matmul(col.T, dyf).reshape(w.shape)
        db = dyf.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    if stride != 1:
        raise ShapeError("input gradient implemented for stride-1 convolutions")
    # dx = conv(pad(dy, k-1-p), flip(w)); requires k-1-p >= 0.
    ph, pw = kh - 1 - padding, kw - 1 - padding
    if ph < 0 or pw < 0:
        raise ShapeError(f"padding {padding} exceeds kernel-1 for input gradient")
    _, h, wid, _ = xshape
    wf = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, ci))
    dyp = _padded(ws, "dyp", dy, ph, pw)
    dx = _buf(ws, "dx", (xshape[0] * h * wid, ci), dy.dtype)
    _gather_cols(ws, "dcol", dyp, kh, kw, 1, 1, h, wid, gemm_into=dx, weight=wf)
    return dx.reshape(xshape), dw, db


# ---------------------------------------------------------------------------
# Transposed convolution
# ---------------------------------------------------------------------------

def transposed_conv2d_forward(x, w, b, stride: int = 1, padding: int = 0, ws=None):
    """Adjoint of the strided convolution: out = (in-1)*stride - 2p + k.

    One GEMM turns every input pixel into its k x k output patch; col2im
    scatters the overlapping patches into the (padded) output frame.
    """
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"tconv shapes incompatible: x{x.shape} w{w.shape}")
    kh, kw, ci, co = w.shape
    bsz, h, wid, _ = x.shape
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wid - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ShapeError(f"tconv output would be empty for input {x.shape}")
    x_flat = np.ascontiguousarray(x.reshape(-1, ci))
    wr = np.ascontiguousarray(w.transpose(2, 0, 1, 3).reshape(ci, kh * kw * co))
    patches = _buf(ws, "patches", (bsz * h * wid, kh * kw * co), x.dtype)
    np.matmul(x_flat, wr, out=patches)
    # scatter into a frame padded by `padding`, then trim
    yp = _buf(ws, "yp", (bsz, (h - 1) * stride + kh, (wid - 1) * stride + kw, co),
              x.dtype)
    yp.fill(0)
    col2im_add(patches, kh, kw, stride, stride, h, wid, yp)
    y = _buf(ws, "y", (bsz, oh, ow, co), x.dtype)
    y[...] = yp[:, padding:padding + oh, padding:padding + ow, :]
    if b is not None:
        y += b
    cache = (x_flat, w, wr, x.shape, (oh, ow), stride, padding, ws)
    return y, cache


def transposed_conv2d_backward(dy, cache, need_input_grad: bool = True):
    x_flat, w, wr, xshape, oshape, stride, padding, ws = cache
    kh, kw, ci, co = w.shape
    bsz, h, wid, _ = xshape
    # gather, for every input pixel, the output-gradient patch it fed
    dyp = _padded(ws, "b_dyp", dy, padding, padding)
    dy_col = _gather_cols(ws, "b_col", dyp, kh, kw, stride, stride, h, wid)
    dw = np.matmul(x_flat.T, dy_col).reshape(ci, kh, kw, co).transpose(1, 2, 0, 3)
    db = dy.sum(axis=(0, 1, 2))
    if not need_input_grad:
        return None, np.ascontiguousarray(dw), db
    dx = _buf(ws, "b_dx", x_flat.shape, dy.dtype)
    np.matmul(dy_col, wr.T, out=dx)
    return dx.reshape(xshape), np.ascontiguousarray(dw), db


# ---------------------------------------------------------------------------
# Pooling and activations
# ---------------------------------------------------------------------------

def maxpool_forward(x, size: int, stride: int, padding: int = 0, ws=None):
    if stride < 1 or size < 1:
        raise ShapeError("pool size and stride must be positive")
    if size * size > 127:
        raise ShapeError("pool windows above 11x11 unsupported")
    oh = _conv_out(x.shape[1], size, stride, padding)
    ow = _conv_out(x.shape[2], size, stride, padding)
    pad_value = np.finfo(x.dtype).min
    xp = _padded(ws, "xp", x, padding, padding, fill=pad_value)
    y = _buf(ws, "y", (x.shape[0], oh, ow, x.shape[3]), x.dtype)
    arg = _buf(ws, "arg", y.shape, np.int8)
    maxpool_fwd(xp, size, size, stride, stride, y, arg)
    cache = (arg, x.shape, size, stride, padding, ws)
    return y, cache


def maxpool_backward(dy, cache):
    arg, xshape, size, stride, padding, ws = cache
    b, h, w, c = xshape
    dxp = _buf(ws, "dxp", (b, h + 2 * padding, w + 2 * padding, c), dy.dtype)
    dxp.fill(0)
    maxpool_bwd(np.ascontiguousarray(dy), arg, size, size, stride, stride, dxp)
    if padding:
        dx = _buf(ws, "dx", xshape, dy.dtype)
        dx[...] = dxp[:, padding:padding + h, padding:padding + w, :]
        return dx
    return dxp


def relu_forward(x, ws=None):
    y = _buf(ws, "act_y", x.shape, x.dtype)
    np.maximum(x, 0, out=y)
    return y, y


def relu_backward(dy, y, ws=None):
    dx = _buf(ws, "act_dx", dy.shape, dy.dtype)
    np.multiply(dy, y > 0, out=dx)
    return dx


def elu_forward(x, alpha: float = 1.0, ws=None):
    y = _buf(ws, "act_y", x.shape, x.dtype)
    np.minimum(x, 0, out=y)
    np.expm1(y, out=y)
    y *= alpha
    np.maximum(y, x, out=y)   # x > 0 ? x : alpha*(exp(x)-1)
    return y, (y, alpha)


def elu_backward(dy, cache, ws=None):
    y, alpha = cache
    dx = _buf(ws, "act_dx", dy.shape, dy.dtype)
    np.minimum(y, 0, out=dx)
    dx += alpha
    np.minimum(dx, 1.0, out=dx)  # y > 0 -> 1, else y + alpha
    dx *= dy
    return dx


# ---------------------------------------------------------------------------
# Batch normalisation (channel-last spatial tensors or flat features)
# ---------------------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      training: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Normalise per channel; running statistics updated in training mode.

    For NHWC input the statistics pool over batch and both spatial axes;
    for (B, F) input over the batch axis. Training mode requires at least
    two pooled samples per channel.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        n = int(np.prod([x.shape[a] for a in axes]))
        if n < 2:
            raise ShapeError("batchnorm training mode needs batch >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = (gamma * xhat + beta).astype(x.dtype, copy=False)
    cache = (xhat.astype(x.dtype, copy=False), gamma,
             inv_std.astype(x.dtype, copy=False), axes)
    return y, cache


def batchnorm_backward(dy, cache):
    xhat, gamma, inv_std, axes = cache
    n = int(np.prod([dy.shape[a] for a in axes]))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    dx = inv_std / n * (
        n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
    )
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


# ---------------------------------------------------------------------------
# Dense layer and losses
# ---------------------------------------------------------------------------

def fully_connected_forward(x, w, b, ws=None):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense shapes incompatible: x{x.shape} w{w.shape}")
    y = _buf(ws, "y", (x.shape[0], w.shape[1]), x.dtype)
    np.matmul(x, w, out=y)
    y += b
    return y, (x, w)


def fully_connected_backward(dy, cache, need_input_grad: bool = True, ws=None):
    x, w = cache
    dy = np.ascontiguousarray(dy)
    dw = x.T @ dy
    db = dy.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    dx = _buf(ws, "dx", x.shape, dy.dtype)
    np.matmul(dy, w.T, out=dx)
    return dx, dw, db


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross entropy of integer labels; returns (loss, dlogits, probs)."""
    if logits.ndim != 2 or len(labels) != len(logits):
        raise ShapeError(f"bad logits {logits.shape} / labels {np.shape(labels)}")
    probs = softmax(logits)
    n = len(labels)
    idx = (np.arange(n), np.asarray(labels, dtype=np.int64))
    loss = float(-np.log(np.maximum(probs[idx], 1e-30)).mean())
    dlogits = probs.copy()
    dlogits[idx] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype, copy=False), probs


def mse(pred, target):
    """Mean squared error over all elements; returns (loss, dpred)."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    dpred = (2.0 / diff.size) * diff
    return loss, dpred.astype(pred.dtype, copy=False)
