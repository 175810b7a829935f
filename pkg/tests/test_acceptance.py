"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a ``PASS``/``FAIL criterion N`` line; the lines are
repeated in the terminal summary. The directional criteria share one set of
training runs on the bundled digits data (see README for the protocol).
"""
import time
from pathlib import Path

import numpy as np
import pytest

from bridgeprune import experiment as E
from bridgeprune import models, regularize as R
from bridgeprune.checkpoint import load_checkpoint
from bridgeprune.config import load_config
from bridgeprune.gradcheck import grad_check
from bridgeprune.metrics import hoyer, sparsity_report
from bridgeprune.prune import PruneSpec, equivalence_check, filter_l2_norms, structural_remove, zero_prune

METHODS = ("none", "weight_dropout", "batch_bridgeout")
FRACTIONS = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
BAND = (0.3, 0.4, 0.5)


def _train_grid(root, model, seeds):
    t = time.perf_counter()
    runs = {}
    for s in seeds:
        cfg = load_config(None, {"model": model, "seed": s, "out": str(root / f"{model}_seed{s}")})
        runs[s] = {Path(p).parent.name: Path(p) for p in E.cmd_train(cfg)}
    return runs, time.perf_counter() - t


def _zero_sweeps(runs, fractions):
    return {s: {m: {r["fraction"]: r["accuracy"] for r in E.prune_sweep(p, fractions, "zero")}
                for m, p in cks.items()} for s, cks in runs.items()}


@pytest.fixture(scope="session")
def seeds(request):
    return list(range(request.config.getoption("--acceptance-seeds")))


@pytest.fixture(scope="session")
def vgg(tmp_path_factory, seeds):
    root = tmp_path_factory.mktemp("vgg")
    t = time.perf_counter()
    runs, _ = _train_grid(root, "tiny_vgg", seeds)
    sweeps = _zero_sweeps(runs, FRACTIONS)
    return runs, sweeps, time.perf_counter() - t


@pytest.fixture(scope="session")
def resnet(tmp_path_factory, seeds):
    root = tmp_path_factory.mktemp("resnet")
    t = time.perf_counter()
    runs, _ = _train_grid(root, "tiny_resnet", seeds)
    sweeps = _zero_sweeps(runs, list(BAND))
    return runs, sweeps, time.perf_counter() - t


def _band_wins(sweeps, strict):
    """Per seed: does batch_bridgeout beat both baselines at every band fraction?"""
    out = {}
    for s, acc in sweeps.items():
        ok = True
        for r in BAND:
            b = acc["batch_bridgeout"][r]
            for m in ("weight_dropout", "none"):
                ok &= b > acc[m][r] if strict else b >= acc[m][r]
        out[s] = ok
    return out


def _band_table(sweeps):
    return "; ".join(
        f"seed {s}: " + " ".join(f"{r:.1f}=" + "/".join(f"{acc[m][r]:.3f}" for m in
                                                          ("batch_bridgeout", "weight_dropout", "none"))
                                 for r in BAND)
        for s, acc in sweeps.items())


# -- 1 ---------------------------------------------------------------------------------

def test_criterion_1_unbiased_perturbation(verdict):
    rng = np.random.default_rng(0)
    n_triples, n_masks = 1000, 100_000
    w_all = rng.uniform(0.05, 3.0, n_triples) * rng.choice([-1.0, 1.0], n_triples)
    p_all = rng.uniform(0.1, 0.9, n_triples)
    q_all = rng.uniform(0.25, 2.0, n_triples)
    target = np.ones(n_masks, bool)
    worst_z, worst_var, bad = 0.0, 0.0, 0
    t = time.perf_counter()
    for w, p, q in zip(w_all, p_all, q_all):
        out = R.bridgeout_perturb(np.full(n_masks, w), rng.random(n_masks) < p, target, p, q)
        mean, var = out.mean(), out.var(ddof=1)
        z = abs(mean - w) / np.sqrt(var / n_masks)
        rel = abs(var / (abs(w) ** q * (1 - p) / p) - 1)
        worst_z, worst_var = max(worst_z, z), max(worst_var, rel)
        bad += z >= 4 or rel >= 0.05
    elapsed = time.perf_counter() - t
    ok = bad == 0 and elapsed < 60
    verdict(1, ok, f"{n_triples} triples x {n_masks} masks, worst |mean-w| = {worst_z:.2f} SE, "
                   f"worst variance error {worst_var:.2%}, {bad} failing triples, {elapsed:.1f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------------------

def test_criterion_2_gradients(verdict):
    t = time.perf_counter()
    data = E.load_data(load_config())[0]
    x, y = data.images[:4].astype(np.float64), data.labels[:4]
    lines, ok = [], True
    for method in METHODS:
        g = models.build("tiny_vgg", data.shape, widths=(4, 4, 8, 8, 8, 8), seed=0, dtype=np.float64)
        assert g.num_params() <= 5000
        state = R.RegularizerState.seeded(0)
        R.begin_minibatch(g, R.PerturbationConfig(method), state)
        try:
            rep = grad_check(g, x, y, tolerance=1e-4)
        finally:
            R.end_minibatch(g, state, None)
        ok &= rep.passed
        lines.append(f"{method} {max(rep.max_rel_error.values()):.1e}")
    elapsed = time.perf_counter() - t
    ok &= elapsed < 120
    verdict(2, ok, f"tiny_vgg {g.num_params()} params f64, max rel error " + ", ".join(lines) + f", {elapsed:.0f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------------------

def test_criterion_3_hoyer(verdict):
    rng = np.random.default_rng(3)
    exact = all(hoyer(np.eye(d)[d // 3]) == 1.0 and hoyer(np.full(d, 2.5)) == 0.0 for d in range(2, 1001))
    h34 = hoyer([3.0, 4.0])
    worst = 0.0
    for _ in range(1000):
        v = rng.standard_normal(rng.integers(2, 500)) * rng.uniform(1e-3, 1e3)
        c = 10 ** rng.uniform(-6, 6)
        worst = max(worst, abs(hoyer(c * v) - hoyer(v)))
    ok = exact and abs(h34 - 0.034314) <= 1e-6 and worst < 1e-12
    verdict(3, ok, f"one-hot/constant exact for d=2..1000: {exact}; H([3,4]) = {h34:.7f}; "
                   f"max scale drift over 1000 vectors {worst:.1e}")
    assert ok


# -- 4 ---------------------------------------------------------------------------------

def test_criterion_4_zero_remove_equivalence(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(4)
    g = models.build("tiny_vgg", (1, 8, 8), seed=0)
    # random batchnorm state so zeroed affines actually matter
    for k in g.params:
        if k.endswith((".scale", ".shift", ".bias")):
            g.params[k] = rng.standard_normal(g.params[k].shape).astype(np.float32)
    for k in g.buffers:
        v = rng.standard_normal(g.buffers[k].shape)
        g.buffers[k] = (np.abs(v) + 0.5 if k.endswith("var") else v).astype(np.float32)
    worst = 0.0
    for i in range(50):
        keep = {}
        for name, n in filter_l2_norms(g).items():
            k = rng.integers(1, len(n) + 1)
            keep[name] = np.sort(rng.choice(len(n), k, replace=False))
        spec = PruneSpec(keep)
        dev, _ = equivalence_check(zero_prune(g, spec), structural_remove(g, spec), n_batches=1,
                                   batch_size=1000, seed=i)
        worst = max(worst, dev)
    elapsed = time.perf_counter() - t
    ok = worst < 1e-5 and elapsed < 120
    verdict(4, ok, f"50 random specs on tiny_vgg (f32), 1000 inputs each, max deviation {worst:.2e}, {elapsed:.0f}s")
    assert ok


# -- 5, 6 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_vgg_pruning_direction(vgg, verdict, seeds):
    _, sweeps, elapsed = vgg
    wins = _band_wins(sweeps, strict=True)
    need = int(np.ceil(0.8 * len(seeds)))
    ok = sum(wins.values()) >= need and elapsed < 30 * 60
    verdict(5, ok, f"bridgeout > dropout and backprop at every fraction 0.3-0.5 in {sum(wins.values())}/{len(seeds)} "
                   f"seeds (need {need}); acc bridgeout/dropout/backprop {_band_table(sweeps)}; {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_6_vgg_hoyer(vgg, verdict):
    runs, _, _ = vgg
    wins = total = 0
    per_seed = []
    for s, cks in runs.items():
        h = {m: sparsity_report(load_checkpoint(p).graph).hoyer for m, p in cks.items()}
        w = sum(b > max(d, n) for b, d, n in zip(h["batch_bridgeout"], h["weight_dropout"], h["none"]))
        wins, total = wins + w, total + len(h["none"])
        per_seed.append(f"{w}/{len(h['none'])}")
    ok = wins >= 0.75 * total
    verdict(6, ok, f"bridgeout has the highest Hoyer in {wins}/{total} (seed, conv layer) pairs "
                   f"= {wins / total:.0%} (need 75%); per seed {', '.join(per_seed)}")
    assert ok


# -- 7 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_resnet_pruning_direction(resnet, verdict, seeds):
    _, sweeps, elapsed = resnet
    wins = _band_wins(sweeps, strict=False)
    need = int(np.ceil(0.8 * len(seeds)))
    ok = sum(wins.values()) >= need and elapsed < 20 * 60
    verdict(7, ok, f"bridgeout >= dropout and backprop at every fraction 0.3-0.5 in {sum(wins.values())}/{len(seeds)} "
                   f"seeds (need {need}); acc bridgeout/dropout/backprop {_band_table(sweeps)}; {elapsed / 60:.1f} min")
    assert ok


# -- 8 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_overhead(verdict):
    rows = E.bench(load_config(None, {"bench.widths": [1, 2], "bench.epochs": 3}))
    ratios = {r["width"]: r["ratio_to_dropout"] for r in rows if r["method"] == "batch_bridgeout"}
    secs = {(r["width"], r["method"]): r["seconds_per_epoch"] for r in rows}
    ok = len(ratios) == 2 and all(v <= 1.5 for v in ratios.values())
    detail = "; ".join(f"x{w}: bridgeout {secs[w, 'batch_bridgeout']:.2f}s vs dropout {secs[w, 'weight_dropout']:.2f}s "
                       f"(ratio {ratios[w]:.2f})" for w in sorted(ratios))
    verdict(8, ok, detail + " per epoch, limit 1.5")
    assert ok


# -- 9 ---------------------------------------------------------------------------------

def _closed_form_params(widths, fraction, in_channels=1, classes=10, spatial=1):
    total, prev = 0, in_channels
    for c in widths:
        k = c - min(int(np.floor(fraction * c + 1e-9)), c - 1)
        total += k * prev * 9 + k + 2 * k  # conv weight, conv bias, batchnorm scale+shift
        prev = k
    return total + classes * prev * spatial + classes


@pytest.mark.slow
def test_criterion_9_cost_accounting(vgg, verdict, tmp_path):
    runs, zero_sweeps, _ = vgg
    mismatches, unit, chance_gap = 0, True, 0.0
    mode_gap = 0.0
    for s, cks in runs.items():
        for m, p in cks.items():
            rows = E.prune_sweep(p, FRACTIONS, "remove", tmp_path / f"{s}_{m}")
            for r in rows:
                expect = _closed_form_params(models.VGG_WIDTHS, r["fraction"])
                mismatches += r["params"] != expect or r["memory_mb"] != expect * 4 / 2**20
                mode_gap = max(mode_gap, abs(r["accuracy"] - zero_sweeps[s][m][r["fraction"]]))
            unit &= rows[0]["compression"] == 1.0 and rows[0]["speedup"] == 1.0
            chance_gap = max(chance_gap, abs(rows[-1]["accuracy"] - 0.1))
    ok = mismatches == 0 and unit and chance_gap <= 0.02
    verdict(9, ok, f"{mismatches} param/memory mismatches over {len(runs) * 3 * len(FRACTIONS)} rows; "
                   f"0% ratios exactly 1/1: {unit}; worst 90% accuracy distance from chance {chance_gap:.3f}; "
                   f"zero vs remove accuracy gap {mode_gap:.1e}")
    assert ok
    assert mode_gap <= 1e-5


# -- 10 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_determinism(vgg, verdict, tmp_path):
    runs, _, _ = vgg
    first = runs[0]
    cfg = load_config(None, {"seed": 0, "out": str(tmp_path / "again")})
    again = {Path(p).parent.name: Path(p) for p in E.cmd_train(cfg)}
    same = all(again[m].read_bytes() == first[m].read_bytes() for m in METHODS)
    cfg = load_config(None, {"seed": 0, "out": str(tmp_path / "split")})
    E.cmd_train(cfg, until_epoch=15)
    resumed = {Path(p).parent.name: Path(p) for p in E.cmd_train(cfg, resume=True)}
    resume_same = all(resumed[m].read_bytes() == first[m].read_bytes() for m in METHODS)
    ok = same and resume_same
    verdict(10, ok, f"rerun byte-identical for all methods: {same}; stop at epoch 15 + resume "
                    f"byte-identical to straight run: {resume_same}")
    assert ok


# -- retraining recovery ------------------------------------------------------------------

@pytest.mark.slow
def test_retrain_recovers_pruned_bridgeout(vgg, tmp_path):
    runs, sweeps, _ = vgg
    ckpt = runs[0]["batch_bridgeout"]
    E.prune_sweep(ckpt, [0.3], "remove", tmp_path)
    rows = {r["variant"]: r for r in E.retrain(tmp_path / "pruned_r0.30.ckpt", out_dir=tmp_path)}
    unpruned = sweeps[0]["batch_bridgeout"][0.0]
    assert rows["retrained"]["accuracy"] >= unpruned - 0.01
    assert "scratch" in rows
