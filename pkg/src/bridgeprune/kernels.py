"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``BRIDGEPRUNE_KERNELS=python`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("BRIDGEPRUNE_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _fallback

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
# the perturbations are single vectorised expressions; numpy is as fast as a loop
bridgeout_perturb = _fallback.bridgeout_perturb
dropout_perturb = _fallback.dropout_perturb
