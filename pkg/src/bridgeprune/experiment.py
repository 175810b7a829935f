"""Train / prune / retrain / report pipeline behind the CLI."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as D
from . import metrics, models, prune
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import config_hash, model_config, train_config
from .errors import ConfigError, UnsupportedStructureError
from .graph import kaiming_init
from .regularize import RegularizerState
from .train import CURVE_COLUMNS, OptimizerState, fit

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("method", "fraction", "accuracy", "params", "memory_mb", "macs", "runtime_s",
                 "compression", "speedup")
RETRAIN_COLUMNS = ("variant", "method", "fraction", "epochs", "accuracy")
BENCH_COLUMNS = ("width", "method", "seconds_per_epoch", "ratio_to_dropout")
REPORT_SCHEMAS = {
    "sparsity_per_layer.csv": ("layer", "method", "hoyer"),
    "norm_curves.csv": ("layer", "method", "rank_fraction", "l2_norm"),
    "accuracy_vs_pruning.csv": ("method", "fraction", "accuracy"),
    "overhead.csv": ("method", "seconds_per_epoch"),
}
CKPT_NAME = "model.ckpt"


def write_csv(path, columns, rows):
    """Write rows (dicts or sequences) atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else r
            w.writerow([_fmt(v) for v in vals])
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- data and models ---------------------------------------------------------------

def load_data(cfg):
    """Normalized ``(train, test, stats)`` for the configured dataset."""
    fmt = cfg["data.format"]
    if fmt == "digits":
        train, test = D.load_digits_split(seed=int(cfg["data.seed"]))
    elif fmt == "synth":
        n, nt = int(cfg["data.n"]), int(cfg["data.test_n"])
        full = D.synth_dataset(n + nt, int(cfg["data.classes"]), int(cfg["data.seed"]), float(cfg["data.noise"]),
                               int(cfg["data.size"]), int(cfg["data.channels"]))
        train = full.subset(np.arange(n))
        test = full.subset(np.arange(n, n + nt))
        test.split = "test"
    elif fmt == "idx":
        for key in ("data.train_images", "data.train_labels", "data.test_images", "data.test_labels"):
            if not cfg[key]:
                raise ConfigError(f"idx data needs {key}")
        train = D.load_idx(cfg["data.train_images"], cfg["data.train_labels"], "train")
        test = D.load_idx(cfg["data.test_images"], cfg["data.test_labels"], "test")
        if cfg["data.subset"]:
            train = train.subset(D.balanced_subset(train.labels, int(cfg["data.subset"]), 10))
        if cfg["data.test_subset"]:
            test = test.subset(D.balanced_subset(test.labels, int(cfg["data.test_subset"]), 10))
    elif fmt == "cifar":
        if not cfg["data.train_paths"] or not cfg["data.test_paths"]:
            raise ConfigError("cifar data needs data.train_paths and data.test_paths")
        train = D.load_cifar_bin(cfg["data.train_paths"], cfg["data.subset"], "train")
        test = D.load_cifar_bin(cfg["data.test_paths"], cfg["data.test_subset"], "test")
    else:
        raise ConfigError(f"unknown data.format {fmt!r}")
    stats = D.channel_stats(train)
    return D.normalize(train, stats), D.normalize(test, stats), stats


def build_model(cfg, input_shape, num_classes, seed=None):
    dtype = np.float64 if cfg["train.dtype"] == "float64" else np.float32
    return models.build(cfg["model"], input_shape, num_classes, cfg["model.widths"],
                        seed=int(cfg["seed"]) if seed is None else seed, dtype=dtype)


def _data_for(ck):
    cfg = ck.meta["experiment"]
    train, test, _ = load_data(cfg)
    return cfg, train, test


# -- train -------------------------------------------------------------------------

def method_dir(out, method):
    return Path(out) / method


def train_method(cfg, method, out=None, until_epoch=None, resume=False):
    """Train one regularizer configuration; returns the checkpoint path.

    With ``resume`` an existing checkpoint in the method directory is
    continued from its stored epoch. ``until_epoch`` stops early (the
    checkpoint then records the partial epoch count).
    """
    out = Path(out or cfg["out"])
    mdir = method_dir(out, method)
    mdir.mkdir(parents=True, exist_ok=True)
    ckpt_path = mdir / CKPT_NAME
    tcfg = train_config(cfg, method)
    train, test, stats = load_data(cfg)
    rows = []
    if resume and ckpt_path.exists():
        ck = load_checkpoint(ckpt_path)
        graph, opt, start = ck.graph, ck.opt, ck.epoch
        rstate = RegularizerState.seeded(0)
        rstate.rng.bit_generator.state = ck.rng_state
        if (mdir / "curves.csv").exists():
            rows = [r for r in read_csv(mdir / "curves.csv") if int(r["epoch"]) < start]
    else:
        graph = build_model(cfg, train.shape, train.num_classes)
        opt, rstate, start = OptimizerState(lr=tcfg.lr), RegularizerState.seeded([tcfg.seed, 1]), 0
    stop = tcfg.epochs if until_epoch is None else min(until_epoch, tcfg.epochs)
    timings = []
    clock = [time.perf_counter()]

    def tick(epoch, row):
        now = time.perf_counter()
        timings.append(now - clock[0])
        clock[0] = now

    new_rows, opt, rstate = fit(graph, train, test, tcfg, opt, rstate, start, stop, on_epoch=tick)
    rows.extend(new_rows)
    meta = {"method": method, "experiment": model_config(cfg), "config_hash": config_hash(cfg),
            "norm_stats": [stats[0].tolist(), stats[1].tolist()]}
    ck = Checkpoint(graph, opt, max(stop, start), tcfg.to_dict(), rstate.rng.bit_generator.state, meta)
    save_checkpoint(ckpt_path, ck)
    write_csv(mdir / "curves.csv", CURVE_COLUMNS, rows)
    if timings:
        (mdir / "timing.json").write_text(json.dumps({"seconds_per_epoch": timings}))
    return ckpt_path


def _train_job(args):
    cfg, method, out, until, resume = args
    return train_method(cfg, method, out, until, resume)


def cmd_train(cfg, jobs=1, until_epoch=None, resume=False):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=1))
    work = [(cfg, m, out, until_epoch, resume) for m in cfg["regularizers"]]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_job, work))
    return [_train_job(w) for w in work]


# -- prune -------------------------------------------------------------------------

def prune_graph(graph, fraction, mode):
    spec = prune.select_filters(prune.filter_l2_norms(graph), fraction=fraction, mode=mode)
    if mode == "remove":
        return prune.structural_remove(graph, spec)
    return prune.zero_prune(graph, spec)


def _prunes_nothing(graph, fraction):
    return all(int(np.floor(fraction * graph.layers[i].out_channels + 1e-9)) == 0 for i in graph.conv_layers())


def prune_sweep(ckpt_path, fractions, mode="zero", out_dir=None, repetitions=3):
    """Prune at each fraction, evaluate and cost the result.

    Returns the SweepResult rows; writes ``sweep_<mode>.csv`` and, in remove
    mode, one pruned checkpoint per fraction when ``out_dir`` is given.
    """
    ck = load_checkpoint(ckpt_path)
    if mode == "remove" and ck.graph.has_residual():
        raise UnsupportedStructureError("remove mode is not supported for residual models; use --mode zero")
    cfg, _, test = _data_for(ck)
    method = ck.meta.get("method", "unknown")
    base = metrics.cost_report(ck.graph, test.images, repetitions)
    rows = []
    for r in fractions:
        g = prune_graph(ck.graph, r, mode)
        if _prunes_nothing(ck.graph, r):
            rep = dataclasses.replace(base, compression=1.0, speedup=1.0)
        else:
            rep = metrics.cost_report(g, test.images, repetitions, baseline=base)
        acc = metrics.accuracy(g, test.images, test.labels)
        rows.append({"method": method, "fraction": float(r), "accuracy": acc, "params": rep.params,
                     "memory_mb": rep.memory_mb, "macs": rep.macs, "runtime_s": rep.runtime_s,
                     "compression": rep.compression, "speedup": rep.speedup})
        if out_dir is not None and mode == "remove":
            meta = dict(ck.meta, prune={"fraction": float(r), "mode": mode, "source": str(ckpt_path),
                                        "accuracy": acc})
            save_checkpoint(Path(out_dir) / f"pruned_r{r:.2f}.ckpt",
                            Checkpoint(g, None, ck.epoch, ck.config, ck.rng_state, meta))
    if out_dir is not None:
        write_csv(Path(out_dir) / f"sweep_{mode}.csv", SWEEP_COLUMNS, rows)
    return rows


# -- retrain -----------------------------------------------------------------------

def retrain(pruned_path, epochs=None, out_dir=None):
    """Fine-tune a structurally pruned model without regularization and train
    a same-shaped model from scratch. Returns the result rows."""
    ck = load_checkpoint(pruned_path)
    info = ck.meta.get("prune")
    if not info or info.get("mode") != "remove":
        raise ConfigError("retrain needs a structurally removed checkpoint (prune --mode remove)")
    cfg, train, test = _data_for(ck)
    epochs = int(cfg["retrain.epochs"] if epochs is None else epochs)
    method, frac = ck.meta.get("method", "unknown"), info["fraction"]
    tcfg = train_config(dict(cfg, **{"train.epochs": epochs, "train.lr": cfg["retrain.lr"]}), "none")
    graph = ck.graph.copy()
    curves, _, _ = fit(graph, train, test, tcfg)
    rows = [
        {"variant": "pruned", "method": method, "fraction": frac, "epochs": 0,
         "accuracy": metrics.accuracy(ck.graph, test.images, test.labels)},
        {"variant": "retrained", "method": method, "fraction": frac, "epochs": epochs,
         "accuracy": metrics.accuracy(graph, test.images, test.labels)},
    ]
    scratch_epochs = int(cfg["retrain.scratch_epochs"] or cfg["train.epochs"])
    scfg = train_config(dict(cfg, **{"train.epochs": scratch_epochs}), "none")
    scratch = kaiming_init(ck.graph.layers, ck.graph.input_shape,
                           np.random.default_rng([int(cfg["seed"]), 7]), ck.graph.dtype)
    fit(scratch, train, test, scfg)
    rows.append({"variant": "scratch", "method": "none", "fraction": frac, "epochs": scratch_epochs,
                 "accuracy": metrics.accuracy(scratch, test.images, test.labels)})
    if out_dir is not None:
        out_dir = Path(out_dir)
        stem = Path(pruned_path).stem
        meta = dict(ck.meta, retrain={"epochs": epochs, "source": str(pruned_path)})
        save_checkpoint(out_dir / f"{stem}_retrained.ckpt", Checkpoint(graph, None, epochs, tcfg.to_dict(), None, meta))
        write_csv(out_dir / f"{stem}_retrain.csv", RETRAIN_COLUMNS, rows)
        write_csv(out_dir / f"{stem}_retrain_curves.csv", CURVE_COLUMNS, curves)
    return rows


# -- report / bench ------------------------------------------------------------------

def report(run_dir, fractions=None):
    """Emit the four plot-data CSVs for every trained method in ``run_dir``.

    Returns the list of methods whose checkpoints were missing.
    """
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    methods = json.loads(cfg_path.read_text())["regularizers"] if cfg_path.exists() else []
    found = sorted(p.parent.name for p in run_dir.glob(f"*/{CKPT_NAME}"))
    missing = [m for m in methods if m not in found]
    for m in missing:
        log.warning("no checkpoint for %s in %s", m, run_dir)
    order = [m for m in methods if m in found] + [m for m in found if m not in methods]
    sparsity, curves, accs, overhead = [], [], [], []
    for m in order:
        ck = load_checkpoint(method_dir(run_dir, m) / CKPT_NAME)
        rep = metrics.sparsity_report(ck.graph)
        sparsity += [(layer, m, h) for layer, h in zip(rep.layers, rep.hoyer)]
        for layer, (frac, norms) in metrics.sorted_norm_curve(prune.filter_l2_norms(ck.graph)).items():
            curves += [(layer, m, f, n) for f, n in zip(frac, norms)]
        cfg, _, test = _data_for(ck)
        for r in fractions or cfg["prune.fractions"]:
            g = prune_graph(ck.graph, r, "zero")
            accs.append((m, float(r), metrics.accuracy(g, test.images, test.labels)))
        tpath = method_dir(run_dir, m) / "timing.json"
        if tpath.exists():
            overhead.append((m, statistics.median(json.loads(tpath.read_text())["seconds_per_epoch"])))
    for name, rows in zip(REPORT_SCHEMAS, (sparsity, curves, accs, overhead)):
        write_csv(run_dir / name, REPORT_SCHEMAS[name], rows)
    return missing


def bench(cfg, out_dir=None):
    """Seconds per epoch for each regularizer at each width multiplier."""
    train, _, _ = load_data(cfg)
    base = cfg["model.widths"] or list((models.VGG_WIDTHS if cfg["model"] == "tiny_vgg" else models.RESNET_WIDTHS))
    rows = []
    for mult in cfg["bench.widths"]:
        widths = [max(1, int(round(w * mult))) for w in base]
        cfg_w = dict(cfg, **{"model.widths": widths})
        configs = {m: train_config(cfg_w, m) for m in ("none", "weight_dropout", "batch_bridgeout")}
        table = metrics.regularizer_overhead_bench(
            lambda: build_model(cfg_w, train.shape, train.num_classes), train, configs, int(cfg["bench.epochs"]))
        for m, sec in table.items():
            rows.append({"width": mult, "method": m, "seconds_per_epoch": sec,
                         "ratio_to_dropout": sec / table["weight_dropout"]})
    if out_dir is not None:
        write_csv(Path(out_dir) / "bench.csv", BENCH_COLUMNS, rows)
    return rows
