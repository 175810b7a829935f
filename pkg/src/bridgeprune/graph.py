"""Layer lists, parameter storage and reverse-mode differentiation."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError

KINDS = ("conv2d", "batchnorm2d", "relu", "maxpool2d", "flatten", "linear", "residual_add")
WEIGHTED = ("conv2d", "linear")


@dataclass
class LayerSpec:
    kind: str
    name: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    # residual_add: index of the earlier layer whose output is added
    src: int = -1
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Graph:
    """An ordered layer list plus named parameter and buffer tensors.

    Trainable tensors live in ``params`` (``<layer>.weight``, ``<layer>.bias``,
    ``<bn>.scale``, ``<bn>.shift``); batchnorm running statistics live in
    ``buffers`` and never receive gradients.
    """

    layers: list
    input_shape: tuple
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self):
        return Graph(copy.deepcopy(self.layers), tuple(self.input_shape),
                     {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype):
        g = self.copy()
        g.params = {k: v.astype(dtype) for k, v in g.params.items()}
        g.buffers = {k: v.astype(dtype) for k, v in g.buffers.items()}
        return g

    def conv_layers(self):
        return [i for i, l in enumerate(self.layers) if l.kind == "conv2d"]

    def weight_layers(self):
        return [i for i, l in enumerate(self.layers) if l.kind in WEIGHTED]

    def has_residual(self):
        return any(l.kind == "residual_add" for l in self.layers)

    def shapes(self):
        """Per-layer output shape (without batch axis); validates the chain."""
        return infer_shapes(self.layers, self.input_shape)

    def num_params(self):
        return int(sum(v.size for v in self.params.values()))

    def check(self):
        """Raise if parameter shapes disagree with the layer specs."""
        self.shapes()
        for l in self.layers:
            if l.kind == "conv2d":
                _expect(self.params, f"{l.name}.weight", (l.out_channels, l.in_channels, l.kernel, l.kernel))
                _expect(self.params, f"{l.name}.bias", (l.out_channels,))
            elif l.kind == "linear":
                _expect(self.params, f"{l.name}.weight", (l.out_channels, l.in_channels))
                _expect(self.params, f"{l.name}.bias", (l.out_channels,))
            elif l.kind == "batchnorm2d":
                for key, store in (("scale", self.params), ("shift", self.params),
                                   ("running_mean", self.buffers), ("running_var", self.buffers)):
                    _expect(store, f"{l.name}.{key}", (l.out_channels,))


def _expect(store, name, shape):
    if name not in store:
        raise DimensionError(f"missing tensor {name}")
    if store[name].shape != tuple(shape):
        raise DimensionError(f"{name} has shape {store[name].shape}, expected {tuple(shape)}")


def infer_shapes(layers, input_shape):
    shapes = []
    cur = tuple(input_shape)
    for i, l in enumerate(layers):
        if l.kind == "conv2d":
            if len(cur) != 3 or cur[0] != l.in_channels:
                raise DimensionError(f"{l.name}: expects {l.in_channels} input channels, got shape {cur}")
            cur = (l.out_channels,
                   ops.conv_output_size(cur[1], l.kernel, l.stride, l.padding),
                   ops.conv_output_size(cur[2], l.kernel, l.stride, l.padding))
        elif l.kind == "batchnorm2d":
            if len(cur) != 3 or cur[0] != l.out_channels:
                raise DimensionError(f"{l.name}: expects {l.out_channels} channels, got shape {cur}")
        elif l.kind == "maxpool2d":
            cur = (cur[0], ops.conv_output_size(cur[1], l.kernel, l.stride, 0),
                   ops.conv_output_size(cur[2], l.kernel, l.stride, 0))
        elif l.kind == "flatten":
            cur = (int(np.prod(cur)),)
        elif l.kind == "linear":
            if cur != (l.in_channels,):
                raise DimensionError(f"{l.name}: expects {l.in_channels} features, got shape {cur}")
            cur = (l.out_channels,)
        elif l.kind == "residual_add":
            if not 0 <= l.src < i or shapes[l.src] != cur:
                raise DimensionError(f"{l.name}: residual source {l.src} does not match shape {cur}")
        shapes.append(cur)
    return shapes


def kaiming_init(layers, input_shape, rng, dtype=np.float32):
    """Fan-in scaled normal weights, zero biases, unit batchnorm scale."""
    params, buffers = {}, {}
    for l in layers:
        if l.kind == "conv2d":
            fan_in = l.in_channels * l.kernel * l.kernel
            w = rng.standard_normal((l.out_channels, l.in_channels, l.kernel, l.kernel)) * np.sqrt(2.0 / fan_in)
            params[f"{l.name}.weight"] = w.astype(dtype)
            params[f"{l.name}.bias"] = np.zeros(l.out_channels, dtype)
        elif l.kind == "linear":
            w = rng.standard_normal((l.out_channels, l.in_channels)) * np.sqrt(2.0 / l.in_channels)
            params[f"{l.name}.weight"] = w.astype(dtype)
            params[f"{l.name}.bias"] = np.zeros(l.out_channels, dtype)
        elif l.kind == "batchnorm2d":
            params[f"{l.name}.scale"] = np.ones(l.out_channels, dtype)
            params[f"{l.name}.shift"] = np.zeros(l.out_channels, dtype)
            buffers[f"{l.name}.running_mean"] = np.zeros(l.out_channels, dtype)
            buffers[f"{l.name}.running_var"] = np.ones(l.out_channels, dtype)
    g = Graph(list(layers), tuple(input_shape), params, buffers)
    g.check()
    return g


def trainable(graph):
    return list(graph.params)


def _run(graph, x, training, update_stats, keep_cache):
    p, buf = graph.params, graph.buffers
    outs = []
    caches = []
    # only outputs that a residual_add reads later must be retained
    needed = {l.src for l in graph.layers if l.kind == "residual_add"}
    for i, l in enumerate(graph.layers):
        cache = None
        if l.kind == "conv2d":
            y, cache = ops._conv2d(x, p[f"{l.name}.weight"], p[f"{l.name}.bias"], l.stride, l.padding)
        elif l.kind == "batchnorm2d":
            y, cache = ops._batchnorm2d(x, p[f"{l.name}.scale"], p[f"{l.name}.shift"],
                                        buf[f"{l.name}.running_mean"], buf[f"{l.name}.running_var"],
                                        training, l.momentum, l.eps, update_stats)
        elif l.kind == "relu":
            y = ops.relu_forward(x)
            cache = x
        elif l.kind == "maxpool2d":
            y, cache = ops._maxpool2d(x, l.kernel, l.stride)
        elif l.kind == "flatten":
            y = ops.flatten(x)
            cache = x.shape
        elif l.kind == "linear":
            y = ops.linear_forward(x, p[f"{l.name}.weight"], p[f"{l.name}.bias"])
            cache = x
        elif l.kind == "residual_add":
            y = ops.residual_add(x, outs[l.src])
        outs.append(y if (keep_cache or i in needed) else None)
        caches.append(cache if keep_cache else None)
        x = y
    return x, caches


def forward(graph, x, training=False, update_stats=True):
    """Logits for a batch. Eval mode (the default) uses batchnorm running stats."""
    if x.dtype != graph.dtype:
        x = x.astype(graph.dtype)
    return _run(graph, x, training, update_stats, keep_cache=False)[0]


def predict(graph, x, batch_size=512):
    out = [forward(graph, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0,))


def backward(graph, x, labels, training=True, update_stats=True, return_logits=False):
    """Loss and gradients of mean softmax cross-entropy w.r.t. every trainable tensor."""
    if x.dtype != graph.dtype:
        x = x.astype(graph.dtype)
    logits, caches = _run(graph, x, training, update_stats, keep_cache=True)
    loss, g = ops.softmax_xent(logits, labels)
    grads = {}
    pending = {}
    p = graph.params
    for i in range(len(graph.layers) - 1, -1, -1):
        l = graph.layers[i]
        if i in pending:
            g = g + pending.pop(i)
        c = caches[i]
        if l.kind == "conv2d":
            g, grads[f"{l.name}.weight"], grads[f"{l.name}.bias"] = ops._conv2d_backward(g, c)
        elif l.kind == "batchnorm2d":
            g, grads[f"{l.name}.scale"], grads[f"{l.name}.shift"] = ops._batchnorm2d_backward(g, c)
        elif l.kind == "relu":
            g = ops._relu_backward(g, c)
        elif l.kind == "maxpool2d":
            g = ops._maxpool2d_backward(g, c)
        elif l.kind == "flatten":
            g = g.reshape(c)
        elif l.kind == "linear":
            g, grads[f"{l.name}.weight"], grads[f"{l.name}.bias"] = ops._linear_backward(g, c, p[f"{l.name}.weight"])
        elif l.kind == "residual_add":
            pending[l.src] = pending.get(l.src, 0) + g
    if return_logits:
        return loss, grads, logits
    return loss, grads
