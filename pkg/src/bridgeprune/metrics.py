"""Sparsity, accuracy and cost accounting."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .graph import forward, infer_shapes
from .ops import softmax_xent

BYTES_PER_PARAM = 4


def hoyer(x):
    """Hoyer sparsity ``(sqrt(d) - |x|_1/|x|_2) / (sqrt(d) - 1)``.

    1 for a one-hot vector, 0 for a constant one. Raises on all-zero input
    or ``d < 2`` where the measure is undefined.
    """
    x = np.abs(np.asarray(x, dtype=np.float64).ravel())
    d = x.size
    if d < 2:
        raise InputError("hoyer needs at least 2 entries")
    # scale first so l1/l2 is exactly invariant and cannot overflow
    peak = x.max()
    if peak == 0:
        raise InputError("hoyer is undefined for an all-zero vector")
    x = x / peak
    l1 = x.sum()
    # sqrt(l1^2 / l2^2) is exact for constant and one-hot vectors
    ratio = np.sqrt(l1 * l1 / np.dot(x, x))
    sd = np.sqrt(d)
    return float(min(1.0, max(0.0, (sd - ratio) / (sd - 1))))


@dataclass
class SparsityReport:
    layers: list
    hoyer: list
    sizes: list


def sparsity_report(graph):
    names, h, d = [], [], []
    for i in graph.conv_layers():
        name = graph.layers[i].name
        w = graph.params[f"{name}.weight"]
        names.append(name)
        h.append(hoyer(w))
        d.append(int(w.size))
    return SparsityReport(names, h, d)


def sorted_norm_curve(norms):
    """Per layer: ``(rank_fraction, descending norms)``."""
    out = {}
    for name, nv in norms.items():
        nv = np.sort(np.asarray(nv, dtype=np.float64))[::-1]
        n = len(nv)
        frac = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
        out[name] = (frac, nv)
    return out


def accuracy(graph, images, labels, batch_size=500):
    """Top-1 accuracy in eval mode."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise InputError("accuracy of an empty dataset is undefined")
    correct = 0
    for i in range(0, len(labels), batch_size):
        logits = forward(graph, images[i:i + batch_size])
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[i:i + batch_size]))
    return correct / len(labels)


def loss_and_accuracy(graph, images, labels, batch_size=500):
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise InputError("empty dataset")
    total, correct = 0.0, 0
    for i in range(0, len(labels), batch_size):
        logits = forward(graph, images[i:i + batch_size])
        y = labels[i:i + batch_size]
        total += softmax_xent(logits, y)[0] * len(y)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
    return total / len(labels), correct / len(labels)


def count_macs(graph, batch=1):
    """Multiply-accumulates of one forward pass (conv and linear layers)."""
    shapes = infer_shapes(graph.layers, graph.input_shape)
    macs = 0
    for i, l in enumerate(graph.layers):
        if l.kind == "conv2d":
            _, oh, ow = shapes[i]
            macs += l.out_channels * oh * ow * l.in_channels * l.kernel * l.kernel
        elif l.kind == "linear":
            macs += l.in_channels * l.out_channels
    return batch * macs


@dataclass
class CostReport:
    params: int
    memory_bytes: int
    macs: int
    runtime_s: float
    runtimes: list = field(default_factory=list)
    compression: float = 1.0
    speedup: float = 1.0

    @property
    def memory_mb(self):
        return self.memory_bytes / 2**20


def time_inference(graph, images, repetitions=3, batch_size=500):
    times = []
    forward(graph, images[:2])  # warm
    for _ in range(repetitions):
        t = time.perf_counter()
        for i in range(0, len(images), batch_size):
            forward(graph, images[i:i + batch_size])
        times.append(time.perf_counter() - t)
    return times


def cost_report(graph, images, repetitions=3, baseline=None):
    """Parameter/memory/MAC counts and median inference wall-clock.

    Ratios are ``baseline / this``; without a baseline they are 1.
    """
    if repetitions < 3:
        raise InputError("cost_report needs at least 3 repetitions")
    n = graph.num_params()
    times = time_inference(graph, images, repetitions)
    rep = CostReport(n, n * BYTES_PER_PARAM, count_macs(graph), statistics.median(times), times)
    if baseline is not None:
        rep.compression = baseline.params / rep.params
        rep.speedup = baseline.runtime_s / rep.runtime_s
    return rep


def regularizer_overhead_bench(make_model, dataset, configs, epochs=3):
    """Median wall-clock seconds per training epoch for each config.

    ``make_model`` returns a fresh graph; ``configs`` maps a label to a
    TrainConfig. Every config sees the same initial weights and batches.
    """
    from .train import fit

    out = {}
    for label, cfg in configs.items():
        graph = make_model()
        times = []
        clock = [time.perf_counter()]

        def tick(epoch, row):
            now = time.perf_counter()
            times.append(now - clock[0])
            clock[0] = now

        fit(graph, dataset, None, cfg, stop_epoch=epochs, on_epoch=tick)
        out[label] = statistics.median(times)
    return out
