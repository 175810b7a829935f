"""Command-line entry point: ``bridgeprune <command> [options] [--key=value ...]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as E
from .config import load_config, parse_value
from .errors import BridgePruneError, ConfigError

log = logging.getLogger("bridgeprune")


def _split_overrides(extra):
    overrides = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognised argument {item!r}; overrides take the form --key=value")
        key, value = item[2:].split("=", 1)
        overrides[key] = parse_value(value)
    return overrides


def _fractions(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="bridgeprune", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
        return sp

    t = common(sub.add_parser("train", help="train one model per regularizer"))
    t.add_argument("--resume", action="store_true", help="continue existing checkpoints")
    t.add_argument("--until-epoch", type=int, help="stop after this many epochs")

    pr = common(sub.add_parser("prune", help="prune-sweep a checkpoint"))
    pr.add_argument("checkpoint", type=Path)
    pr.add_argument("--mode", choices=("zero", "remove"))
    pr.add_argument("--fractions", type=_fractions)

    rt = common(sub.add_parser("retrain", help="retrain a structurally pruned checkpoint"))
    rt.add_argument("checkpoint", type=Path)
    rt.add_argument("--epochs", type=int)

    rp = common(sub.add_parser("report", help="emit plot-data CSVs for a run directory"))
    rp.add_argument("run_dir", type=Path)
    rp.add_argument("--fractions", type=_fractions)

    common(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    common(sub.add_parser("bench", help="regularizer overhead per epoch"))
    return p


def _resolve(args, extra):
    overrides = _split_overrides(extra)
    for flag, key in (("seed", "seed"), ("out", "out"), ("jobs", "jobs"), ("deterministic", "deterministic")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = str(v) if isinstance(v, Path) else v
    return load_config(args.config, overrides)


def run(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _resolve(args, extra)
    out = Path(cfg["out"])
    if args.command == "train":
        for path in E.cmd_train(cfg, int(cfg["jobs"]), args.until_epoch, args.resume):
            print(path)
    elif args.command == "prune":
        mode = args.mode or cfg["prune.mode"]
        out_dir = args.out or args.checkpoint.parent
        rows = E.prune_sweep(args.checkpoint, args.fractions or cfg["prune.fractions"], mode, out_dir,
                             int(cfg["prune.repetitions"]))
        for r in rows:
            print(f"{r['fraction']:.2f} acc={r['accuracy']:.4f} params={r['params']} "
                  f"compression={r['compression']:.2f} speedup={r['speedup']:.2f}")
    elif args.command == "retrain":
        out_dir = args.out or args.checkpoint.parent
        for r in E.retrain(args.checkpoint, args.epochs, out_dir):
            print(f"{r['variant']:>9} fraction={r['fraction']:.2f} acc={r['accuracy']:.4f}")
    elif args.command == "report":
        missing = E.report(args.run_dir, args.fractions)
        if missing:
            print(f"warning: missing checkpoints for {', '.join(missing)}", file=sys.stderr)
    elif args.command == "gradcheck":
        return _gradcheck(cfg)
    elif args.command == "bench":
        for r in E.bench(cfg, out):
            print(f"width x{r['width']} {r['method']:>16}: {r['seconds_per_epoch']:.3f} s/epoch "
                  f"({r['ratio_to_dropout']:.2f}x dropout)")
    return 0


def _gradcheck(cfg):
    from . import models, regularize
    from .config import perturbation_config
    from .gradcheck import grad_check

    train, _, _ = E.load_data(cfg)
    n = int(cfg["gradcheck.batch"])
    x = train.images[:n].astype(np.float64)
    y = train.labels[:n]
    ok = True
    for method in cfg["regularizers"]:
        g = models.build(cfg["model"], train.shape, train.num_classes, cfg["gradcheck.widths"],
                         seed=int(cfg["seed"]), dtype=np.float64)
        state = regularize.RegularizerState.seeded(int(cfg["seed"]))
        regularize.begin_minibatch(g, perturbation_config(cfg, method), state)
        try:
            rep = grad_check(g, x, y, float(cfg["gradcheck.tolerance"]))
        finally:
            regularize.end_minibatch(g, state, None)
        worst = max(rep.max_rel_error.values())
        print(f"{method:>16}: {g.num_params()} params, max rel error {worst:.2e} "
              f"{'PASS' if rep.passed else 'FAIL ' + ', '.join(rep.failures)}")
        ok &= rep.passed
    return 0 if ok else 1


def main(argv=None):
    try:
        sys.exit(run(argv))
    except BridgePruneError as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()
