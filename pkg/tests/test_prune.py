import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridgeprune import models
from bridgeprune.errors import ConfigError, SpecError, UnsupportedStructureError
from bridgeprune.graph import LayerSpec, forward, kaiming_init
from bridgeprune.prune import (PruneSpec, equivalence_check, filter_l2_norms, select_filters,
                               structural_remove, zero_prune)

SMALL = (4, 4, 8, 8, 8, 8)


def _vgg(seed=0, widths=SMALL, dtype=np.float64):
    g = models.build("tiny_vgg", (1, 8, 8), widths=widths, seed=seed, dtype=dtype)
    # non-trivial batchnorm state so the equivalence is not vacuous
    rng = np.random.default_rng(seed + 100)
    for k in g.params:
        if k.endswith((".scale", ".shift", ".bias")):
            g.params[k] = rng.standard_normal(g.params[k].shape).astype(dtype)
    for k in g.buffers:
        v = rng.standard_normal(g.buffers[k].shape)
        g.buffers[k] = (np.abs(v) + 0.5 if k.endswith("var") else v).astype(dtype)
    return g


def test_filter_norm_example():
    layers = [LayerSpec("conv2d", "c", 1, 2, kernel=1), LayerSpec("flatten", "f"), LayerSpec("linear", "fc", 2, 2)]
    g = kaiming_init(layers, (1, 1, 1), np.random.default_rng(0), np.float64)
    g.params["c.weight"][:] = np.array([-3.0, 5.0]).reshape(2, 1, 1, 1)
    g.params["c.bias"][:] = 100.0
    assert np.allclose(filter_l2_norms(g)["c"], [3.0, 5.0])


def test_filter_norm_multi_entry():
    layers = [LayerSpec("conv2d", "c", 2, 1, kernel=1), LayerSpec("flatten", "f"), LayerSpec("linear", "fc", 1, 2)]
    g = kaiming_init(layers, (2, 1, 1), np.random.default_rng(0), np.float64)
    g.params["c.weight"][:] = np.array([3.0, 4.0]).reshape(1, 2, 1, 1)
    assert filter_l2_norms(g)["c"][0] == 5.0


def test_select_filters_examples():
    spec = select_filters({"a": [0.5, 2.0, 0.1, 3.0]}, fraction=0.5)
    assert spec.keep["a"].tolist() == [1, 3]
    # ties: lower index pruned first
    assert select_filters({"a": [1.0, 1.0, 1.0, 1.0]}, fraction=0.5).keep["a"].tolist() == [2, 3]
    assert select_filters({"a": [1.0, 2.0, 3.0]}, k=1).keep["a"].tolist() == [2]
    assert select_filters({"a": [1.0, 2.0, 3.0]}, fraction=0.0).keep["a"].tolist() == [0, 1, 2]
    # floor(0.3 * 10) = 3 dropped
    assert len(select_filters({"a": np.arange(10.0)}, fraction=0.3).keep["a"]) == 7


def test_select_filters_errors():
    with pytest.raises(ConfigError):
        select_filters({"a": [1.0]}, fraction=1.0)
    with pytest.raises(ConfigError):
        select_filters({"a": [1.0, 2.0]}, k=3)
    with pytest.raises(ConfigError):
        select_filters({"a": [1.0]})
    with pytest.raises(ConfigError):
        PruneSpec({}, mode="shrink")
    with pytest.raises(SpecError):
        PruneSpec({"a": []})


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=2, max_size=40), st.floats(0, 0.95), st.floats(0, 0.95))
def test_selection_nested(norms, r1, r2):
    lo, hi = sorted((r1, r2))
    a = set(select_filters({"x": norms}, fraction=lo).keep["x"].tolist())
    b = set(select_filters({"x": norms}, fraction=hi).keep["x"].tolist())
    assert b <= a


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=2, max_size=40, unique=True), st.floats(0, 0.95),
       st.randoms(use_true_random=False))
def test_selection_permutation_equivariant(norms, r, rnd):
    perm = list(range(len(norms)))
    rnd.shuffle(perm)
    base = select_filters({"x": norms}, fraction=r).keep["x"]
    permuted = select_filters({"x": [norms[i] for i in perm]}, fraction=r).keep["x"]
    assert sorted(perm[i] for i in permuted) == base.tolist()


def test_bad_indices():
    g = _vgg()
    with pytest.raises(SpecError):
        zero_prune(g, PruneSpec({"conv1": [0, 9]}))
    with pytest.raises(SpecError):
        zero_prune(g, PruneSpec({"nope": [0]}))


def test_zero_prune_zeroes_affine():
    g = _vgg()
    z = zero_prune(g, PruneSpec({"conv1": [0, 2]}))
    assert not z.params["conv1.weight"][[1, 3]].any()
    assert not z.params["bn1.scale"][[1, 3]].any() and not z.params["bn1.shift"][[1, 3]].any()
    assert z.params["conv1.weight"].shape == g.params["conv1.weight"].shape
    assert np.array_equal(z.params["conv1.weight"][0], g.params["conv1.weight"][0])
    # original untouched
    assert g.params["bn1.scale"][1] != 0


def test_flatten_columns_removed():
    layers = [LayerSpec("conv2d", "c", 1, 2, kernel=1), LayerSpec("flatten", "f"), LayerSpec("linear", "fc", 8, 3)]
    g = kaiming_init(layers, (1, 2, 2), np.random.default_rng(0), np.float64)
    g.params["fc.weight"][:] = np.arange(24.0).reshape(3, 8)
    r = structural_remove(g, PruneSpec({"c": [0]}, "remove"))
    assert r.params["fc.weight"].shape == (3, 4)
    assert np.array_equal(r.params["fc.weight"], g.params["fc.weight"][:, :4])
    r = structural_remove(g, PruneSpec({"c": [1]}, "remove"))
    assert np.array_equal(r.params["fc.weight"], g.params["fc.weight"][:, 4:8])


def _closed_form_params(widths, keep_counts, in_c=1, classes=10, hw=1):
    total, prev = 0, in_c
    for k in keep_counts:
        total += k * prev * 9 + k + 2 * k
        prev = k
    return total + classes * prev * hw + classes


@pytest.mark.parametrize("r", [0.0, 0.3, 0.5, 0.9])
def test_remove_parameter_count(r):
    g = _vgg()
    spec = select_filters(filter_l2_norms(g), fraction=r, mode="remove")
    removed = structural_remove(g, spec)
    ks = [w - min(int(np.floor(r * w + 1e-9)), w - 1) for w in SMALL]
    assert removed.num_params() == _closed_form_params(SMALL, ks)
    assert g.num_params() == _closed_form_params(SMALL, SMALL)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_zero_remove_equivalent(seed):
    g = _vgg(seed % 7)
    rng = np.random.default_rng(seed)
    keep = {}
    for name, n in filter_l2_norms(g).items():
        k = rng.integers(1, len(n) + 1)
        keep[name] = np.sort(rng.choice(len(n), k, replace=False))
    spec = PruneSpec(keep)
    dev, ok = equivalence_check(zero_prune(g, spec), structural_remove(g, spec), n_batches=1, batch_size=50, seed=seed)
    assert ok, dev


def test_residual_remove_unsupported():
    g = models.build("tiny_resnet", (1, 8, 8), widths=(2, 2, 2, 2), seed=0)
    spec = select_filters(filter_l2_norms(g), fraction=0.5, mode="remove")
    with pytest.raises(UnsupportedStructureError):
        structural_remove(g, spec)
    z = zero_prune(g, spec)
    assert forward(z, np.zeros((2, 1, 8, 8), np.float32)).shape == (2, 10)


def test_equivalence_check_detects_difference():
    a, b = _vgg(0), _vgg(1)
    dev, ok = equivalence_check(a, b, n_batches=1, batch_size=10)
    assert not ok and dev > 1e-3
