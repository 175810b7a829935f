"""Flat dotted-key experiment configuration.

A config file is a YAML mapping whose keys are dotted names, e.g.::

    model: tiny_vgg
    train.epochs: 30
    reg.q: 1.5

Any key can be overridden on the command line with ``--key=value``; the value
is parsed as YAML so ``--prune.fractions=[0,0.5]`` works.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import yaml

from .errors import ConfigError
from .regularize import PerturbationConfig
from .train import TrainConfig

DEFAULTS = {
    "model": "tiny_vgg",
    "model.widths": None,
    "data.format": "digits",
    "data.train_images": None,
    "data.train_labels": None,
    "data.test_images": None,
    "data.test_labels": None,
    "data.train_paths": [],
    "data.test_paths": [],
    "data.subset": None,
    "data.test_subset": None,
    "data.n": 2000,
    "data.test_n": 500,
    "data.noise": 0.1,
    "data.size": 8,
    "data.channels": 1,
    "data.classes": 10,
    "data.seed": 0,
    "train.epochs": 30,
    "train.batch_size": 16,
    "train.lr": 0.1,
    "train.lr_decay": 0.98,
    "train.momentum": 0.9,
    "train.weight_decay": 5e-4,
    "train.dtype": "float32",
    "seed": 0,
    "deterministic": True,
    "regularizers": ["none", "weight_dropout", "batch_bridgeout"],
    "reg.p": 0.3,
    "reg.q": 1.5,
    "reg.gamma": 0.75,
    "reg.grad_mode": "straight_through",
    "prune.fractions": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "prune.mode": "zero",
    "prune.repetitions": 3,
    "retrain.epochs": 10,
    "retrain.lr": 0.01,
    "retrain.scratch_epochs": None,
    "bench.epochs": 3,
    "bench.widths": [1, 2],
    "gradcheck.widths": [4, 4, 8, 8, 8, 8],
    "gradcheck.batch": 4,
    "gradcheck.tolerance": 1e-4,
    "out": "runs/default",
    "jobs": 1,
}


def parse_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def load_config(path=None, overrides=None):
    """Merge defaults, an optional YAML file and ``{key: value}`` overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a flat key/value mapping")
        _merge(cfg, loaded)
    _merge(cfg, overrides or {})
    validate(cfg)
    return cfg


def _merge(cfg, new):
    for key, value in new.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value


def validate(cfg):
    fr = cfg["prune.fractions"]
    if not isinstance(fr, list) or not all(isinstance(r, (int, float)) and 0 <= r < 1 for r in fr):
        raise ConfigError("prune.fractions must be a list of numbers in [0, 1)")
    if not cfg["regularizers"]:
        raise ConfigError("regularizers must list at least one method")
    if cfg["prune.mode"] not in ("zero", "remove"):
        raise ConfigError("prune.mode must be zero or remove")
    for m in cfg["regularizers"]:
        perturbation_config(cfg, m)
    train_config(cfg, "none")


def perturbation_config(cfg, method):
    return PerturbationConfig(method=method, p=float(cfg["reg.p"]), q=float(cfg["reg.q"]),
                              gamma=float(cfg["reg.gamma"]), grad_mode=cfg["reg.grad_mode"])


def train_config(cfg, method):
    return TrainConfig(
        epochs=int(cfg["train.epochs"]), batch_size=int(cfg["train.batch_size"]), lr=float(cfg["train.lr"]),
        lr_decay=float(cfg["train.lr_decay"]), momentum=float(cfg["train.momentum"]),
        weight_decay=float(cfg["train.weight_decay"]), seed=int(cfg["seed"]),
        perturbation=perturbation_config(cfg, method), dtype=cfg["train.dtype"],
        deterministic=bool(cfg["deterministic"]))


# where and how a run executes; never part of a model's identity
RUNTIME_KEYS = ("out", "jobs")


def model_config(cfg):
    """``cfg`` without the runtime keys, as stored in checkpoints."""
    return {k: v for k, v in cfg.items() if k not in RUNTIME_KEYS}


def config_hash(cfg, exclude=()):
    skip = set(exclude) | set(RUNTIME_KEYS)
    body = json.dumps({k: v for k, v in cfg.items() if k not in skip}, sort_keys=True)
    return hashlib.sha256(body.encode()).hexdigest()[:16]
