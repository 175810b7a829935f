"""Per-mini-batch stochastic weight perturbation.

A ``begin_minibatch`` / ``end_minibatch`` pair brackets one forward/backward
pass. ``begin`` snapshots each perturbable weight, draws one Bernoulli mask
per layer and installs the perturbed weights; ``end`` restores the snapshot
so the optimizer always updates the unperturbed weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, LifecycleError

METHODS = ("none", "batch_bridgeout", "weight_dropout")
GRAD_MODES = ("straight_through", "full_derivative")


@dataclass
class PerturbationConfig:
    method: str = "none"
    p: float = 0.3
    q: float = 1.5
    gamma: float = 0.75
    grad_mode: str = "straight_through"
    epsilon_q: float = 1e-8

    def __post_init__(self):
        if self.method == "backprop":
            self.method = "none"
        if self.method not in METHODS:
            raise ConfigError(f"unknown perturbation method {self.method!r}")
        if self.grad_mode not in GRAD_MODES:
            raise ConfigError(f"unknown grad_mode {self.grad_mode!r}")
        if self.method != "none" and not 0.0 < self.p < 1.0:
            raise ConfigError(f"p must lie in (0, 1), got {self.p}")
        if self.method == "batch_bridgeout" and not 0.0 < self.q <= 2.0:
            raise ConfigError(f"q must lie in (0, 2], got {self.q}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass
class RegularizerState:
    rng: np.random.Generator
    masks: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)
    snapshot: dict = field(default_factory=dict)
    active: bool = False
    config: PerturbationConfig | None = None

    @classmethod
    def seeded(cls, seed):
        return cls(np.random.default_rng(seed))


def target_mask(weights, gamma):
    """Mark the ``floor(gamma * n)`` smallest-magnitude entries.

    Among equal magnitudes the lower flat index is marked first.
    """
    a = np.abs(weights).ravel()
    n = a.size
    k = int(np.floor(gamma * n + 1e-9))
    out = np.zeros(n, dtype=bool)
    if k >= n:
        out[:] = True
    elif k > 0:
        kth = np.partition(a, k - 1)[k - 1]
        out = a < kth
        ties = np.flatnonzero(a == kth)
        out[ties[: k - int(out.sum())]] = True
    return out.reshape(np.shape(weights))


def bridgeout_perturb(weights, mask, target, p, q):
    """Targeted entries become ``w - |w|^(q/2)`` where ``mask`` is 0 and
    ``w + |w|^(q/2) (1-p)/p`` where it is 1; the rest pass through."""
    return kernels.bridgeout_perturb(weights, mask, target, p, q)


def dropout_perturb(weights, mask, target, p):
    """Inverted weight dropout with keep probability ``p`` on targeted entries."""
    return kernels.dropout_perturb(weights, mask, target, p)


def perturbable(graph):
    """Names of conv/linear weight tensors, excluding the final layer's."""
    idx = graph.weight_layers()
    return [f"{graph.layers[i].name}.weight" for i in idx[:-1]]


def begin_minibatch(graph, config, state):
    if state.active:
        raise LifecycleError("begin_minibatch called while a perturbation is already applied")
    state.active = True
    state.config = config
    state.masks.clear()
    state.targets.clear()
    state.snapshot.clear()
    if config.method == "none":
        return
    for name in perturbable(graph):
        w = graph.params[name]
        target = target_mask(w, config.gamma)
        mask = state.rng.random(w.shape) < config.p
        state.snapshot[name] = w
        state.targets[name] = target
        state.masks[name] = mask
        if config.method == "batch_bridgeout":
            graph.params[name] = bridgeout_perturb(w, mask, target, config.p, config.q)
        else:
            graph.params[name] = dropout_perturb(w, mask, target, config.p)


def end_minibatch(graph, state, grads):
    """Restore the unperturbed weights and map gradients back onto them."""
    if not state.active:
        raise LifecycleError("end_minibatch called without begin_minibatch")
    cfg = state.config
    for name, w in state.snapshot.items():
        graph.params[name] = w
    if cfg.method != "none" and cfg.grad_mode == "full_derivative" and grads is not None:
        grads = dict(grads)
        for name, w in state.snapshot.items():
            grads[name] = grads[name] * _jacobian_diag(w, state.masks[name], state.targets[name], cfg)
    state.snapshot.clear()
    state.active = False
    return grads


def _jacobian_diag(w, mask, target, cfg):
    w64 = w.astype(np.float64)
    if cfg.method == "weight_dropout":
        d = np.where(mask, 1.0 / cfg.p, 0.0)
    else:
        slope = (cfg.q / 2) * (np.abs(w64) + cfg.epsilon_q) ** (cfg.q / 2 - 1) * np.sign(w64)
        d = np.where(mask, 1.0 + slope * (1 - cfg.p) / cfg.p, 1.0 - slope)
    return np.where(target, d, 1.0).astype(w.dtype)
