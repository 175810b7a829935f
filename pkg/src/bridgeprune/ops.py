"""Forward and backward kernels for the layer types used by the models.

Tensors are plain numpy arrays in NCHW layout. Each private ``_op`` returns
``(out, cache)``; the matching ``_op_backward`` consumes the cache. The public
``*_forward`` functions return only the output.
"""
import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, InputError

F64 = np.float64


def conv_output_size(size, k, stride, padding):
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigError(
            f"conv/pool output size ({size} + 2*{padding} - {k})/{stride} + 1 is not a positive integer"
        )
    return span // stride + 1


# -- conv2d ------------------------------------------------------------------

def _conv2d(x, w, b, stride, padding):
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if cin != wcin:
        raise DimensionError(f"conv2d input has {cin} channels, weight expects {wcin}")
    if b.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {b.shape} != ({cout},)")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(wd, kw, stride, padding)
    cols = kernels.im2col(np.ascontiguousarray(x), kh, kw, stride, padding)
    y = cols @ w.reshape(cout, -1).T
    y += b
    out = np.ascontiguousarray(y.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))
    return out, (x.shape, cols, w, stride, padding)


def _conv2d_backward(dout, cache):
    x_shape, cols, w, stride, padding = cache
    cout, cin, kh, kw = w.shape
    dy = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (dy.T @ cols).reshape(w.shape)
    db = dy.sum(axis=0, dtype=F64).astype(dout.dtype)
    dcols = np.ascontiguousarray(dy @ w.reshape(cout, -1))
    dx = kernels.col2im(dcols, tuple(x_shape), kh, kw, stride, padding)
    return dx, dw, db


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    """Cross-correlation of ``x[N,Cin,H,W]`` with ``weight[Cout,Cin,kh,kw]`` plus bias."""
    return _conv2d(x, weight, bias, stride, padding)[0]


# -- batchnorm ---------------------------------------------------------------

def _batchnorm2d(x, scale, shift, running_mean, running_var, training, momentum=0.1, eps=1e-5,
                 update_stats=True):
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise DimensionError(f"batchnorm over {c} channels got affine shapes {scale.shape}, {shift.shape}")
    dt = x.dtype
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise DimensionError("batchnorm training mode needs N*H*W >= 2")
        mean = x.mean(axis=(0, 2, 3), dtype=F64)
        xc = x - mean.astype(dt)[None, :, None, None]
        var = np.square(xc).mean(axis=(0, 2, 3), dtype=F64)
        if update_stats:
            running_mean *= 1 - momentum
            running_mean += (momentum * mean).astype(running_mean.dtype)
            running_var *= 1 - momentum
            running_var += (momentum * var * m / (m - 1)).astype(running_var.dtype)
    else:
        mean = running_mean.astype(F64)
        var = running_var.astype(F64)
        xc = x - mean.astype(dt)[None, :, None, None]
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = xc * inv_std[None, :, None, None]
    out = xhat * scale[None, :, None, None] + shift[None, :, None, None]
    return out, (xhat, inv_std, scale, training)


def _batchnorm2d_backward(dout, cache):
    xhat, inv_std, scale, training = cache
    dt = dout.dtype
    dscale = (dout * xhat).sum(axis=(0, 2, 3), dtype=F64)
    dshift = dout.sum(axis=(0, 2, 3), dtype=F64)
    if training:
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        # dxhat = dout*scale; sums of dxhat and dxhat*xhat follow from dshift, dscale
        k = (scale * inv_std).astype(dt)[None, :, None, None]
        mean_d = (dshift / m).astype(dt)[None, :, None, None]
        mean_dx = (dscale / m).astype(dt)[None, :, None, None]
        dx = k * (dout - mean_d - xhat * mean_dx)
    else:
        dx = dout * (scale * inv_std)[None, :, None, None]
    return dx, dscale.astype(dt), dshift.astype(dt)


def batchnorm2d_forward(x, scale, shift, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    In training mode the batch statistics over (N, H, W) are used and the
    running buffers are updated in place; in eval mode the running buffers
    are used. Output is ``scale * normalized + shift``.
    """
    return _batchnorm2d(x, scale, shift, running_mean, running_var, training, momentum, eps)[0]


# -- elementwise / structural --------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0)


def _relu_backward(dout, x):
    # derivative at exactly 0 is 0
    return dout * (x > 0)


def _maxpool2d(x, k, stride):
    conv_output_size(x.shape[2], k, stride, 0)
    conv_output_size(x.shape[3], k, stride, 0)
    out, arg = kernels.maxpool_forward(np.ascontiguousarray(x), k, stride)
    return out, (x.shape, arg)


def _maxpool2d_backward(dout, cache):
    x_shape, arg = cache
    return kernels.maxpool_backward(np.ascontiguousarray(dout), arg, tuple(x_shape))


def maxpool2d_forward(x, k=2, stride=2):
    """Window max; ties resolve to the first maximum in scan order."""
    return _maxpool2d(x, k, stride)[0]


def flatten(x):
    return x.reshape(x.shape[0], -1)


def linear_forward(x, weight, bias):
    """``x @ W.T + b`` with ``weight[out, in]``."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear expects [N, {weight.shape[1]}] input, got {x.shape}")
    return x @ weight.T + bias


def _linear_backward(dout, x, weight):
    dx = dout @ weight
    dw = dout.T @ x
    db = dout.sum(axis=0, dtype=F64).astype(dout.dtype)
    return dx, dw, db


def residual_add(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"residual_add shapes differ: {a.shape} vs {b.shape}")
    return a + b


# -- loss ----------------------------------------------------------------------

def softmax_xent(logits, labels):
    """Mean cross-entropy of ``logits[N, K]`` against integer labels.

    Returns ``(loss, dlogits)`` where ``dlogits = (softmax - onehot) / N``.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise InputError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k})")
    z = logits.astype(F64)
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    lse = np.log(s)[:, 0]
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    grad = ez / s
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)
