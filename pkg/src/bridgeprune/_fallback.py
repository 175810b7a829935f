"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and the same floating-point summation order, so results are bit-identical
across backends.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad):
    """Unfold ``x[N,C,H,W]`` into rows ``[N*OH*OW, C*kh*kw]``."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # [N,C,OH,OW,kh,kw] -> [N,OH,OW,C,kh,kw]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add rows back into an image."""
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, oh, ow, c, kh, kw)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def maxpool_forward(x, k, stride):
    """Window max. Returns the pooled map and, per output cell, the flat
    ``h*W + w`` offset of the first maximal input in scan order."""
    n, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    win = win.reshape(n, c, oh, ow, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(arg, k)
    rows = np.arange(oh)[:, None] * stride + di
    cols = np.arange(ow)[None, :] * stride + dj
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def maxpool_backward(dout, argmax, x_shape):
    n, c, h, w = x_shape
    dx = np.zeros((n * c, h * w), dtype=dout.dtype)
    idx = argmax.reshape(n * c, -1)
    src = dout.reshape(n * c, -1)
    rows = np.repeat(np.arange(n * c), idx.shape[1])
    # sequential scatter-add keeps overlapping windows in scan order
    np.add.at(dx, (rows, idx.ravel()), src.ravel())
    return dx.reshape(x_shape)


def bridgeout_perturb(w, mask, target, p, q):
    a = np.abs(w) ** (q / 2.0)
    up = a * ((1.0 - p) / p)
    delta = np.where(mask, up, -a)
    return np.where(target, w + delta, w).astype(w.dtype, copy=False)


def dropout_perturb(w, mask, target, p):
    kept = w / p
    return np.where(target, np.where(mask, kept, 0), w).astype(w.dtype, copy=False)
