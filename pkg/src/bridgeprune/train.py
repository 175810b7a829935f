"""SGD training loop with perturbation hooks, evaluation and resume support."""
from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import regularize as reg
from .data import BatchPlan, batches
from .errors import ConfigError, NumericError
from .graph import backward
from .metrics import loss_and_accuracy

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    lr_decay: float = 0.98
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    perturbation: reg.PerturbationConfig = field(default_factory=reg.PerturbationConfig)
    dtype: str = "float32"
    deterministic: bool = True

    def __post_init__(self):
        if isinstance(self.perturbation, dict):
            self.perturbation = reg.PerturbationConfig(**self.perturbation)
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)
    step: int = 0
    lr: float = 0.0


def lr_schedule(lr0, decay, epoch):
    return lr0 * decay ** epoch


def decayed_names(graph):
    """Weight decay applies to conv/linear weights only."""
    return {f"{graph.layers[i].name}.weight" for i in graph.weight_layers()}


def sgd_step(params, grads, state, lr, momentum=0.9, weight_decay=0.0, decay=None):
    """Coupled momentum SGD: ``v = mu*v + g + wd*w``; ``w -= lr*v``.

    ``decay`` is the set of parameter names that receive weight decay
    (all of ``grads`` when None). Updates ``params`` and ``state`` in place.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    for name, g in grads.items():
        w = params[name]
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(w)
        v *= w.dtype.type(momentum)
        v += g
        if weight_decay and (decay is None or name in decay):
            v += w.dtype.type(weight_decay) * w
        w -= w.dtype.type(lr) * v
    state.step += 1
    state.lr = lr


@contextlib.contextmanager
def _single_thread(enabled):
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(1):
        yield


def train_epoch(graph, dataset, config, opt, rstate, epoch):
    """One pass over ``dataset``. Returns ``(mean loss, running accuracy)``."""
    lr = lr_schedule(config.lr, config.lr_decay, epoch)
    plan = BatchPlan(config.batch_size, config.seed, drop_last=False)
    decay = decayed_names(graph)
    pcfg = config.perturbation
    losses, correct, seen = [], 0, 0
    if rstate.active:
        raise NumericError("regularizer left active from a previous batch")
    for b, (xb, yb) in enumerate(batches(dataset, plan, epoch)):
        if len(yb) < 2:
            continue  # batchnorm needs two samples
        reg.begin_minibatch(graph, pcfg, rstate)
        try:
            loss, grads, logits = backward(graph, xb, yb, return_logits=True)
        finally:
            grads = reg.end_minibatch(graph, rstate, locals().get("grads"))
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")
        try:
            sgd_step(graph.params, grads, opt, lr, config.momentum, config.weight_decay, decay)
        except NumericError as e:
            raise NumericError(f"epoch {epoch} batch {b}: {e}") from None
        losses.append(loss * len(yb))
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        seen += len(yb)
    opt.lr = lr
    return (sum(losses) / seen if seen else float("nan")), (correct / seen if seen else float("nan"))


def evaluate(graph, dataset):
    """Mean loss and top-1 accuracy with unperturbed weights and running stats."""
    return loss_and_accuracy(graph, dataset.images, dataset.labels)


def fit(graph, train, val, config, opt=None, rstate=None, start_epoch=0, stop_epoch=None, on_epoch=None):
    """Train from ``start_epoch`` to ``stop_epoch`` (default ``config.epochs``).

    Returns ``(curve rows, opt, rstate)``. ``on_epoch(epoch, row)`` is called
    after each completed epoch.
    """
    opt = opt or OptimizerState(lr=config.lr)
    rstate = rstate or reg.RegularizerState.seeded([config.seed, 1])
    stop = config.epochs if stop_epoch is None else stop_epoch
    rows = []
    with _single_thread(config.deterministic):
        for epoch in range(start_epoch, stop):
            tl, ta = train_epoch(graph, train, config, opt, rstate, epoch)
            vl, va = evaluate(graph, val) if val is not None and len(val) else (float("nan"), float("nan"))
            row = dict(zip(CURVE_COLUMNS, (epoch, tl, vl, ta, va, lr_schedule(config.lr, config.lr_decay, epoch))))
            rows.append(row)
            log.info("epoch %d loss %.4f val_loss %.4f val_acc %.4f", epoch, tl, vl, va)
            if on_epoch is not None:
                on_epoch(epoch, row)
    return rows, opt, rstate
