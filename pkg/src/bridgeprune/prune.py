"""L2-norm filter ranking, zero-out pruning and structural filter removal."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SpecError, UnsupportedStructureError
from .graph import forward


@dataclass
class PruneSpec:
    """Per conv layer (by name) the sorted indices of filters to keep."""

    keep: dict = field(default_factory=dict)
    mode: str = "zero"

    def __post_init__(self):
        if self.mode not in ("zero", "remove"):
            raise ConfigError(f"prune mode must be 'zero' or 'remove', got {self.mode!r}")
        for name, k in self.keep.items():
            if len(k) == 0:
                raise SpecError(f"layer {name}: keep set is empty")


def filter_l2_norms(graph):
    """``{conv layer name: norm per output filter}``; biases are excluded."""
    out = {}
    for i in graph.conv_layers():
        name = graph.layers[i].name
        w = graph.params[f"{name}.weight"].astype(np.float64)
        out[name] = np.sqrt(np.square(w.reshape(w.shape[0], -1)).sum(axis=1))
    if not out:
        raise ConfigError("graph has no conv layers")
    return out


def _keep_indices(norms, n_prune):
    cout = len(norms)
    # ascending by norm, lower index first among equals; the first n_prune go
    order = np.lexsort((np.arange(cout), norms))
    return np.sort(order[n_prune:])


def select_filters(norms, fraction=None, k=None, mode="zero"):
    """Keep the largest-norm filters of every layer.

    Pass either a uniform ``fraction`` pruned per layer (``floor(r * Cout)``
    filters are dropped) or ``k``, an int or a ``{layer: k}`` mapping.
    """
    if (fraction is None) == (k is None):
        raise ConfigError("select_filters needs exactly one of fraction or k")
    keep = {}
    for name, nv in norms.items():
        nv = np.asarray(nv, dtype=np.float64)
        cout = len(nv)
        if fraction is not None:
            if not 0.0 <= fraction < 1.0:
                raise ConfigError(f"prune fraction must lie in [0, 1), got {fraction}")
            n_prune = int(np.floor(fraction * cout + 1e-9))
        else:
            kk = k[name] if isinstance(k, dict) else k
            if not 1 <= kk <= cout:
                raise ConfigError(f"layer {name}: k={kk} outside [1, {cout}]")
            n_prune = cout - kk
        n_prune = min(n_prune, cout - 1)
        keep[name] = _keep_indices(nv, n_prune)
    return PruneSpec(keep, mode)


def _consumers(graph, conv_idx):
    """Layers fed by the channels of conv ``conv_idx`` up to and including the
    next channel-mixing layer: ``(bn_names, next_kind, next_index)``."""
    bns = []
    for j in range(conv_idx + 1, len(graph.layers)):
        l = graph.layers[j]
        if l.kind == "batchnorm2d":
            bns.append(l.name)
        elif l.kind in ("relu", "maxpool2d"):
            continue
        elif l.kind == "flatten":
            for m in range(j + 1, len(graph.layers)):
                if graph.layers[m].kind == "linear":
                    return bns, "flatten", (j, m)
                if graph.layers[m].kind != "relu":
                    break
            raise UnsupportedStructureError(f"flatten after {graph.layers[conv_idx].name} does not feed a linear layer")
        elif l.kind == "conv2d":
            return bns, "conv", j
        elif l.kind == "residual_add":
            return bns, "residual", j
        else:
            raise UnsupportedStructureError(f"cannot trace channels through {l.kind} ({l.name})")
    return bns, None, None


def _check_indices(graph, spec):
    convs = {graph.layers[i].name: graph.layers[i] for i in graph.conv_layers()}
    for name, keep in spec.keep.items():
        if name not in convs:
            raise SpecError(f"{name} is not a conv layer")
        keep = np.asarray(keep)
        cout = convs[name].out_channels
        if keep.min() < 0 or keep.max() >= cout or len(np.unique(keep)) != len(keep):
            raise SpecError(f"{name}: keep indices must be distinct and lie in [0, {cout})")


def zero_prune(graph, spec):
    """Zero pruned filters, their biases and the following batchnorm affine.

    Tensor shapes are unchanged. Returns a new graph.
    """
    _check_indices(graph, spec)
    g = graph.copy()
    index = {l.name: i for i, l in enumerate(g.layers)}
    for name, keep in spec.keep.items():
        cout = g.params[f"{name}.weight"].shape[0]
        drop = np.setdiff1d(np.arange(cout), keep)
        if drop.size == 0:
            continue
        g.params[f"{name}.weight"][drop] = 0
        g.params[f"{name}.bias"][drop] = 0
        for bn in _consumers(g, index[name])[0]:
            g.params[f"{bn}.scale"][drop] = 0
            g.params[f"{bn}.shift"][drop] = 0
    return g


def structural_remove(graph, spec):
    """Physically delete pruned filters and the inputs they fed.

    The conv weight, bias and following batchnorm entries shrink to the keep
    set; the next conv drops the matching input channels, and a
    flatten -> linear boundary drops every column originating from a removed
    channel (channel-major flatten order).
    """
    if graph.has_residual():
        raise UnsupportedStructureError("structural removal across residual connections is not supported; use zero mode")
    _check_indices(graph, spec)
    g = graph.copy()
    shapes = g.shapes()
    index = {l.name: i for i, l in enumerate(g.layers)}
    for name, keep in spec.keep.items():
        keep = np.asarray(keep)
        i = index[name]
        layer = g.layers[i]
        if len(keep) == layer.out_channels:
            continue
        g.params[f"{name}.weight"] = g.params[f"{name}.weight"][keep].copy()
        g.params[f"{name}.bias"] = g.params[f"{name}.bias"][keep].copy()
        layer.out_channels = len(keep)
        bns, kind, nxt = _consumers(g, i)
        for bn in bns:
            for key in ("scale", "shift"):
                g.params[f"{bn}.{key}"] = g.params[f"{bn}.{key}"][keep].copy()
            for key in ("running_mean", "running_var"):
                g.buffers[f"{bn}.{key}"] = g.buffers[f"{bn}.{key}"][keep].copy()
            g.layers[index[bn]].in_channels = len(keep)
            g.layers[index[bn]].out_channels = len(keep)
        if kind == "conv":
            nl = g.layers[nxt]
            g.params[f"{nl.name}.weight"] = g.params[f"{nl.name}.weight"][:, keep].copy()
            nl.in_channels = len(keep)
        elif kind == "flatten":
            fl, lin = nxt
            c, h, w = shapes[fl - 1]
            cols = (keep[:, None] * (h * w) + np.arange(h * w)[None, :]).ravel()
            ll = g.layers[lin]
            g.params[f"{ll.name}.weight"] = g.params[f"{ll.name}.weight"][:, cols].copy()
            ll.in_channels = len(cols)
    g.check()
    return g


def equivalence_check(zeroed, removed, n_batches=4, batch_size=250, tol=1e-5, seed=0, inputs=None):
    """Max absolute logit deviation between two graphs on random inputs.

    Returns ``(deviation, passed)``.
    """
    if tuple(zeroed.input_shape) != tuple(removed.input_shape):
        raise UnsupportedStructureError(f"input shapes differ: {zeroed.input_shape} vs {removed.input_shape}")
    rng = np.random.default_rng(seed)
    dev = 0.0
    batches = [inputs] if inputs is not None else (
        rng.standard_normal((batch_size,) + tuple(zeroed.input_shape)) for _ in range(n_batches))
    for x in batches:
        a = forward(zeroed, x.astype(zeroed.dtype))
        b = forward(removed, x.astype(removed.dtype))
        dev = max(dev, float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64)))))
    return dev, dev <= tol
