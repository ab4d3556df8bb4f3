"""Dense rank-4 tensor layers with explicit forward and backward passes.

All tensors are float64 numpy arrays in NCHW layout.  The fast path is
im2col/col2im backed by BLAS matmul; setting FOLIOSEG_ORACLE=1 switches every
op to a naive-loop reference implementation with the same summation
semantics, used for conformance testing.  No op mutates its inputs.

Weight layouts: convolution (outC, inC, kH, kW); transposed convolution
(inC, outC, kH, kW).
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError


def oracle_mode() -> bool:
    return os.environ.get("FOLIOSEG_ORACLE", "") == "1"


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, outH, outW, C*kh*kw) patches of an already-padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (N, C, outH, outW, kh, kw) -> (N, outH, outW, C, kh, kw)
    n, c, oh, ow = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh, ow, c * kh * kw)


def _col2im(cols: np.ndarray, c: int, kh: int, kw: int, hp: int, wp: int, stride: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto a padded plane."""
    n, oh, ow = cols.shape[:3]
    cols = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, hp, wp))
    for u in range(kh):
        for v in range(kw):
            out[:, :, u : u + oh * stride : stride, v : v + ow * stride : stride] += cols[:, :, u, v]
    return out


def _conv_out_dim(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise DataError(
            f"non-integral conv output: size {size}, kernel {k}, stride {stride}, pad {pad}"
        )
    return span // stride + 1


# ---------------------------------------------------------------------------
# Convolution


def conv2d_fwd(x, w, b, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation with zero padding: y[n,o,i,j] = b[o] + sum w*x."""
    if oracle_mode():
        return conv2d_fwd_naive(x, w, b, stride, pad)
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    if c != ic:
        raise DataError(f"channel mismatch: input {c}, kernel expects {ic}")
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(wd, kw, stride, pad)
    cols = _im2col(_pad_hw(x, pad), kh, kw, stride).reshape(n * oh * ow, -1)
    y = cols @ w.reshape(oc, -1).T + b
    return y.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2).copy()


def conv2d_bwd(x, w, dy, stride: int = 1, pad: int = 0):
    """Gradients (dx, dw, db) of sum(dy * conv2d_fwd(x, w, b))."""
    if oracle_mode():
        return conv2d_bwd_naive(x, w, dy, stride, pad)
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    _, _, oh, ow = dy.shape
    db = dy.sum(axis=(0, 2, 3))
    cols = _im2col(_pad_hw(x, pad), kh, kw, stride).reshape(n * oh * ow, -1)
    dyf = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, oc)
    dw = (dyf.T @ cols).reshape(w.shape)
    dcols = (dyf @ w.reshape(oc, -1)).reshape(n, oh, ow, -1)
    dxp = _col2im(dcols, c, kh, kw, h + 2 * pad, wd + 2 * pad, stride)
    dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
    return dx.copy(), dw, db


# ---------------------------------------------------------------------------
# Transposed convolution


def deconv2d_out_dim(size: int, k: int, stride: int, pad: int) -> int:
    out = (size - 1) * stride - 2 * pad + k
    if out < 1:
        raise DataError(f"non-positive deconv output dim ({out})")
    return out


def deconv2d_fwd(x, w, b, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Transposed convolution (scatter-accumulate), adjoint of conv2d_fwd."""
    if oracle_mode():
        return deconv2d_fwd_naive(x, w, b, stride, pad)
    n, c, h, wd = x.shape
    ic, oc, kh, kw = w.shape
    if c != ic:
        raise DataError(f"channel mismatch: input {c}, kernel expects {ic}")
    oh = deconv2d_out_dim(h, kh, stride, pad)
    ow = deconv2d_out_dim(wd, kw, stride, pad)
    xf = x.transpose(0, 2, 3, 1).reshape(n, h, wd, c)
    cols = xf.reshape(n, h, wd, c) @ w.reshape(ic, -1)  # (n, h, wd, oc*kh*kw)
    yp = _col2im(cols, oc, kh, kw, oh + 2 * pad, ow + 2 * pad, stride)
    y = yp[:, :, pad : pad + oh, pad : pad + ow] if pad else yp
    return y + b[None, :, None, None]


def deconv2d_bwd(x, w, dy, stride: int = 1, pad: int = 0):
    """Gradients (dx, dw, db) of sum(dy * deconv2d_fwd(x, w, b))."""
    if oracle_mode():
        return deconv2d_bwd_naive(x, w, dy, stride, pad)
    n, c, h, wd = x.shape
    ic, oc, kh, kw = w.shape
    db = dy.sum(axis=(0, 2, 3))
    # dx is a plain convolution of dy with the same kernel
    dy_cols = _im2col(_pad_hw(dy, pad), kh, kw, stride).reshape(n * h * wd, -1)
    dx = (dy_cols @ w.reshape(ic, -1).T).reshape(n, h, wd, c).transpose(0, 3, 1, 2).copy()
    xf = x.transpose(0, 2, 3, 1).reshape(n * h * wd, c)
    dw = (xf.T @ dy_cols).reshape(w.shape)
    return dx, dw, db


# ---------------------------------------------------------------------------
# Max pooling (2x2, stride 2)


def maxpool2_fwd(x):
    """Halve H and W taking window maxima; ties go to the first element in
    row-major window order.  Returns (y, argmax) with argmax in 0..3."""
    if oracle_mode():
        return maxpool2_fwd_naive(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DataError(f"maxpool needs even dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y.copy(), arg.astype(np.int8)


def maxpool2_bwd(arg, dy):
    """Route each dy entry to its recorded window argmax."""
    if oracle_mode():
        return maxpool2_bwd_naive(arg, dy)
    n, c, h2, w2 = dy.shape
    win = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(win, arg.astype(np.intp)[..., None], dy[..., None], axis=-1)
    return win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2 * 2, w2 * 2).copy()


# ---------------------------------------------------------------------------
# Pointwise


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, dy):
    return np.where(x > 0, dy, 0.0)


def softmax_channels(x):
    """Numerically stable softmax over the channel axis, per pixel."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Naive-loop reference implementations (normative semantics / oracles)


def conv2d_fwd_naive(x, w, b, stride: int = 1, pad: int = 0):
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    if c != ic:
        raise DataError(f"channel mismatch: input {c}, kernel expects {ic}")
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(wd, kw, stride, pad)
    y = np.zeros((n, oc, oh, ow))
    for nn in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = b[o]
                    for cc in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                yy = i * stride - pad + u
                                xx = j * stride - pad + v
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += w[o, cc, u, v] * x[nn, cc, yy, xx]
                    y[nn, o, i, j] = acc
    return y


def conv2d_bwd_naive(x, w, dy, stride: int = 1, pad: int = 0):
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    _, _, oh, ow = dy.shape
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = dy.sum(axis=(0, 2, 3))
    for nn in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    g = dy[nn, o, i, j]
                    for cc in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                yy = i * stride - pad + u
                                xx = j * stride - pad + v
                                if 0 <= yy < h and 0 <= xx < wd:
                                    dx[nn, cc, yy, xx] += g * w[o, cc, u, v]
                                    dw[o, cc, u, v] += g * x[nn, cc, yy, xx]
    return dx, dw, db


def deconv2d_fwd_naive(x, w, b, stride: int = 1, pad: int = 0):
    n, c, h, wd = x.shape
    ic, oc, kh, kw = w.shape
    if c != ic:
        raise DataError(f"channel mismatch: input {c}, kernel expects {ic}")
    oh = deconv2d_out_dim(h, kh, stride, pad)
    ow = deconv2d_out_dim(wd, kw, stride, pad)
    y = np.zeros((n, oc, oh, ow))
    y += b[None, :, None, None]
    for nn in range(n):
        for cc in range(c):
            for i in range(h):
                for j in range(wd):
                    v_in = x[nn, cc, i, j]
                    for o in range(oc):
                        for u in range(kh):
                            for v in range(kw):
                                yy = i * stride - pad + u
                                xx = j * stride - pad + v
                                if 0 <= yy < oh and 0 <= xx < ow:
                                    y[nn, o, yy, xx] += v_in * w[cc, o, u, v]
    return y


def deconv2d_bwd_naive(x, w, dy, stride: int = 1, pad: int = 0):
    n, c, h, wd = x.shape
    ic, oc, kh, kw = w.shape
    oh, ow = dy.shape[2:]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = dy.sum(axis=(0, 2, 3))
    for nn in range(n):
        for cc in range(c):
            for i in range(h):
                for j in range(wd):
                    for o in range(oc):
                        for u in range(kh):
                            for v in range(kw):
                                yy = i * stride - pad + u
                                xx = j * stride - pad + v
                                if 0 <= yy < oh and 0 <= xx < ow:
                                    g = dy[nn, o, yy, xx]
                                    dx[nn, cc, i, j] += g * w[cc, o, u, v]
                                    dw[cc, o, u, v] += g * x[nn, cc, i, j]
    return dx, dw, db


def maxpool2_fwd_naive(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DataError(f"maxpool needs even dims, got {h}x{w}")
    y = np.zeros((n, c, h // 2, w // 2))
    arg = np.zeros((n, c, h // 2, w // 2), dtype=np.int8)
    for nn in range(n):
        for cc in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    best, besti = -np.inf, 0
                    for k, (du, dv) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                        v = x[nn, cc, 2 * i + du, 2 * j + dv]
                        if v > best:
                            best, besti = v, k
                    y[nn, cc, i, j] = best
                    arg[nn, cc, i, j] = besti
    return y, arg


def maxpool2_bwd_naive(arg, dy):
    n, c, h2, w2 = dy.shape
    dx = np.zeros((n, c, h2 * 2, w2 * 2))
    offs = ((0, 0), (0, 1), (1, 0), (1, 1))
    for nn in range(n):
        for cc in range(c):
            for i in range(h2):
                for j in range(w2):
                    du, dv = offs[arg[nn, cc, i, j]]
                    dx[nn, cc, 2 * i + du, 2 * j + dv] += dy[nn, cc, i, j]
    return dx
