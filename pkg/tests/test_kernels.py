import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridgeprune import _fallback, kernels

compiled = pytest.importorskip("bridgeprune._kernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 3), c=st.integers(1, 4), h=st.integers(3, 9), w=st.integers(3, 9),
       k=st.integers(1, 3), stride=st.integers(1, 2), pad=st.integers(0, 1),
       dtype=st.sampled_from([np.float32, np.float64]), seed=st.integers(0, 2**16))
def test_im2col_col2im_backends_identical(n, c, h, w, k, stride, pad, dtype, seed):
    if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w)).astype(dtype)
    a = _fallback.im2col(x, k, k, stride, pad)
    b = compiled.im2col(x, k, k, stride, pad)
    assert np.array_equal(a, b)
    cols = rng.standard_normal(a.shape).astype(dtype)
    assert np.array_equal(_fallback.col2im(cols, x.shape, k, k, stride, pad),
                          compiled.col2im(cols, x.shape, k, k, stride, pad))


@pytest.mark.parametrize("k,stride", [(2, 2), (3, 1), (3, 2)])
def test_maxpool_backends_identical(rng, k, stride):
    x = rng.standard_normal((2, 3, 7, 7))
    o1, a1 = _fallback.maxpool_forward(x, k, stride)
    o2, a2 = compiled.maxpool_forward(x, k, stride)
    assert np.array_equal(o1, o2) and np.array_equal(a1, a2)
    d = rng.standard_normal(o1.shape)
    assert np.array_equal(_fallback.maxpool_backward(d, a1, x.shape), compiled.maxpool_backward(d, a2, x.shape))


def test_maxpool_tie_goes_to_first_in_scan_order():
    x = np.ones((1, 1, 2, 2))
    for mod in (_fallback, compiled):
        out, arg = mod.maxpool_forward(x, 2, 2)
        assert arg[0, 0, 0, 0] == 0
        dx = mod.maxpool_backward(np.ones_like(out), arg, x.shape)
        assert dx[0, 0].tolist() == [[1, 0], [0, 0]]
