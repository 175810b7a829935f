# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_fallback``.

Loop orders mirror the numpy versions so both backends produce identical
bits; see ``tests/test_kernels.py``.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((n * oh * ow, c * kh * kw), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t b, y, xx, ch, i, j, row, col, iy, ix
    with nogil:
        for b in range(n):
            for y in range(oh):
                for xx in range(ow):
                    row = (b * oh + y) * ow + xx
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            iy = y * stride + i - pad
                            for j in range(kw):
                                ix = xx * stride + j - pad
                                if 0 <= iy < h and 0 <= ix < w:
                                    out[row, col] = x[b, ch, iy, ix]
                                col += 1
    return out_arr


def col2im(floating[:, ::1] cols, tuple x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t hp = h + 2 * pad, wp = w + 2 * pad
    dtype = np.float32 if floating is float else np.float64
    pad_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] img = pad_arr
    cdef Py_ssize_t b, y, xx, ch, i, j, row, col
    # (i, j) outermost per output pixel: same accumulation order as numpy
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for y in range(oh):
                        for xx in range(ow):
                            row = (b * oh + y) * ow + xx
                            for ch in range(c):
                                col = (ch * kh + i) * kw + j
                                img[b, ch, y * stride + i, xx * stride + j] += cols[row, col]
    if pad:
        return np.ascontiguousarray(pad_arr[:, :, pad:hp - pad, pad:wp - pad])
    return pad_arr


def maxpool_forward(floating[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, y, xx, i, j, best_i
    cdef floating best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for xx in range(ow):
                        best = x[b, ch, y * stride, xx * stride]
                        best_i = (y * stride) * w + xx * stride
                        for i in range(k):
                            for j in range(k):
                                v = x[b, ch, y * stride + i, xx * stride + j]
                                if v > best:
                                    best = v
                                    best_i = (y * stride + i) * w + xx * stride + j
                        out[b, ch, y, xx] = best
                        arg[b, ch, y, xx] = best_i
    return out_arr, arg_arr


def maxpool_backward(floating[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] argmax, tuple x_shape):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = dout.shape[2], ow = dout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((n, c, h * w), dtype=dtype)
    cdef floating[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ch, y, xx
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for xx in range(ow):
                        dx[b, ch, argmax[b, ch, y, xx]] += dout[b, ch, y, xx]
    return dx_arr.reshape(x_shape)
