"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .graph import _run, backward
from .ops import softmax_xent


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    tolerance: float = 1e-4
    # entries whose stencil straddled a relu/maxpool kink at the base step
    refined: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.failures


def _eval(graph, x, labels, training):
    """Loss plus a digest of every relu sign pattern and maxpool argmax."""
    logits, caches = _run(graph, x, training, False, keep_cache=True)
    h = hashlib.blake2b(digest_size=16)
    for layer, c in zip(graph.layers, caches):
        if layer.kind == "relu":
            h.update(np.packbits(c > 0).tobytes())
        elif layer.kind == "maxpool2d":
            h.update(c[1].tobytes())
    return softmax_xent(logits, labels)[0], h.digest()


def rel_error(analytic, numeric, floor=1e-8):
    """Largest entrywise deviation relative to the tensor's gradient scale."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def grad_check(graph, x, labels, tolerance=1e-4, step=1e-3, training=True, grads=None, params=None,
               floor=1e-6, min_step=1e-7):
    """Compare ``grads`` (computed with :func:`backward` when omitted) against
    central differences of the loss.

    Per tensor the error is ``max|a - n| / max(max|a|, max|n|, floor)``.
    When the ``+-step`` stencil changes a relu sign or a maxpool winner the
    step for that entry is divided by 10 until it no longer does (down to
    ``min_step``). Run in float64; batchnorm running statistics are left
    untouched.
    """
    x = np.asarray(x, dtype=graph.dtype)
    if grads is None:
        _, grads = backward(graph, x, labels, training=training, update_stats=False)
    _, base = _eval(graph, x, labels, training)
    report = GradCheckReport(tolerance=tolerance)
    for name in params or list(graph.params):
        w = graph.params[name]
        num = np.zeros(w.shape, dtype=np.float64)
        flat = w.reshape(-1)
        refined = 0
        for i in range(flat.size):
            old = flat[i]
            h = step
            while True:
                flat[i] = old + h
                hi, sig_hi = _eval(graph, x, labels, training)
                flat[i] = old - h
                lo, sig_lo = _eval(graph, x, labels, training)
                flat[i] = old
                if (sig_hi == base and sig_lo == base) or h / 10 < min_step:
                    break
                h /= 10
            refined += h != step
            num.flat[i] = (hi - lo) / (2 * h)
        err = rel_error(np.asarray(grads[name], dtype=np.float64), num, floor)
        report.max_rel_error[name] = err
        report.refined[name] = refined
        if not err < tolerance:
            report.failures.append(name)
    return report
