import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forest_helpers import BACKENDS, blobs
from oracles import histogram
from vpmondrian.forest import (
    DimensionMismatch,
    ForestConfig,
    MondrianForest,
    footprint_bytes,
    node_bytes,
    sample_split,
)
from vpmondrian.instrument import InstrumentationMode
from vpmondrian.rng import Xoshiro256
from vpmondrian.vprec import BINARY64, PrecisionFormat

def config(**kw):
    base = dict(n_trees=3, memory_bytes=50_000, n_features=4, n_classes=3, seed=11)
    base.update(kw)
    return ForestConfig.from_table(**base)


@pytest.mark.parametrize("backend", BACKENDS)
def test_first_sample_defines_root(backend):
    f = MondrianForest(config(n_trees=1), backend=backend)
    f.partial_fit([1.0, -2.0, 3.5, 0.25], 2)
    (root,) = f.nodes()
    assert root.lower_bound == root.upper_bound == (1.0, -2.0, 3.5, 0.25)
    assert root.label_counts == (0, 0, 1)
    assert root.is_leaf


def test_extension_along_one_axis_picks_that_axis():
    rng = Xoshiro256(5)
    for _ in range(200):
        dim, thr, time = sample_split([0.0, 0.0], [1.0, 1.0], [2.0, 1.0], 0.0, rng)
        assert dim == 0
        assert 1.0 < thr < 2.0
        assert time > 0.0


def test_threshold_interval_below_the_box():
    rng = Xoshiro256(9)
    for _ in range(200):
        _, thr, _ = sample_split([0.0], [1.0], [-3.0], 0.5, rng)
        assert -3.0 < thr < 0.0


def test_dimension_frequency_follows_extension():
    rng = Xoshiro256(2024)
    n = 100_000
    hits = sum(sample_split([0.0, 0.0], [1.0, 1.0], [4.0, 2.0], 0.0, rng)[0] == 0 for _ in range(n))
    assert abs(hits / n - 0.75) <= 0.01


def test_threshold_uniform_over_extension():
    rng = Xoshiro256(3)
    thr = np.array([sample_split([0.0], [1.0], [3.0], 0.0, rng)[1] for _ in range(20_000)])
    # Kolmogorov-Smirnov distance against U(1, 3); 1.36/sqrt(n) is the 5% level.
    u = np.sort((thr - 1.0) / 2.0)
    ecdf = np.arange(1, len(u) + 1) / len(u)
    assert np.max(np.abs(ecdf - u)) < 1.36 / math.sqrt(len(u))


def test_inside_box_never_splits():
    with pytest.raises(ValueError):
        sample_split([0.0], [1.0], [0.5], 0.0, Xoshiro256(1))


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_leaf_counts_are_the_histogram(backend):
    X, y = blobs(n=300)
    size = node_bytes(4).total
    cfg = ForestConfig(n_trees=1, memory_bytes=size, n_features=4, n_classes=3, discount=0.0, seed=3)
    f = MondrianForest(cfg, backend=backend)
    assert f.pool.capacity_nodes == 1
    for i in range(len(y)):
        f.partial_fit(X[i], y[i])
        hist = histogram(y[: i + 1], 3)
        np.testing.assert_allclose(f.predict_proba(X[(i * 7) % len(y)]), hist / hist.sum(), rtol=0, atol=1e-15)
    (root,) = f.nodes()
    assert root.label_counts == tuple(int(c) for c in histogram(y, 3))


def test_posterior_discount_one():
    # One leaf with counts {A: 2, B: 1}; parent distribution uniform.
    cfg = ForestConfig(n_trees=1, memory_bytes=node_bytes(1).total, n_features=1, n_classes=2, discount=1.0)
    f = MondrianForest(cfg)
    for label in (0, 0, 1):
        f.partial_fit([0.0], label)
    np.testing.assert_allclose(f.predict_proba([0.0]), [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_posterior_discount_zero_is_maximum_likelihood():
    cfg = ForestConfig(n_trees=1, memory_bytes=node_bytes(1).total, n_features=1, n_classes=3, discount=0.0)
    f = MondrianForest(cfg)
    for label in (2, 0, 2, 2, 1):
        f.partial_fit([1.0], label)
    assert f.predict_proba([1.0]).tolist() == [0.2, 0.2, 0.6]


@pytest.mark.parametrize("backend", BACKENDS)
def test_untrained_is_uniform(backend):
    f = MondrianForest(config(n_classes=4), backend=backend)
    assert f.predict_proba([0, 0, 0, 0]).tolist() == [0.25] * 4
    assert f.predict([0, 0, 0, 0]) == 0


def test_base_count_blends_root_prior():
    cfg = ForestConfig(n_trees=1, memory_bytes=node_bytes(1).total, n_features=1, n_classes=2,
                       discount=0.0, base_count=2.0)
    f = MondrianForest(cfg)
    f.partial_fit([0.0], 0)
    # (1 + 2 * 0.5) / (1 + 2) and (0 + 2 * 0.5) / 3
    np.testing.assert_allclose(f.predict_proba([0.0]), [2 / 3, 1 / 3], rtol=0, atol=1e-15)


@pytest.mark.parametrize("backend", BACKENDS)
def test_memorises_one_class_region(backend):
    f = MondrianForest(config(), backend=backend)
    X, y = blobs(n=300)
    f.fit_stream(X, y)
    for k in range(3):
        x = X[np.flatnonzero(y == k)[0]]
        assert f.predict(x) == k


@pytest.mark.parametrize("backend", BACKENDS)
def test_structure_invariants(backend):
    X, y = blobs(n=800, features=4)
    f = MondrianForest(config(memory_bytes=20_000), backend=backend)
    f.fit_stream(X, y)
    cfg = f.config
    nodes = {n.index: n for n in f.nodes()}
    for n in nodes.values():
        assert all(lo <= hi for lo, hi in zip(n.lower_bound, n.upper_bound))
        present = [n.split_dim is not None, n.split_threshold is not None,
                   n.left_child is not None, n.right_child is not None]
        assert all(present) or not any(present)
        if not n.is_leaf:
            d = n.split_dim
            assert n.lower_bound[d] <= n.split_threshold <= n.upper_bound[d]
            assert n.split_time <= cfg.budget
            for c in (n.left_child, n.right_child):
                assert nodes[c].split_time > n.split_time
                assert nodes[c].parent == n.index
    pool = f.pool
    assert pool.allocated == len(nodes)
    assert pool.allocated_bytes <= cfg.memory_bytes


@pytest.mark.parametrize("backend", BACKENDS)
def test_memory_ceiling_every_sample(backend):
    X, y = blobs(n=1500 if backend == "python" else 6000)
    f = MondrianForest(config(memory_bytes=6_000), backend=backend)
    for i in range(len(y)):
        f.partial_fit(X[i], y[i])
        assert f.pool.allocated_bytes <= f.config.memory_bytes
    assert f.pool.full
    counts_before = sum(sum(n.label_counts) for n in f.nodes())
    f.partial_fit(X[0], y[0])
    assert sum(sum(n.label_counts) for n in f.nodes()) > counts_before


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2)), min_size=1, max_size=40),
       st.tuples(st.floats(-6, 6), st.floats(-6, 6)), st.integers(0, 2 ** 32))
def test_posterior_normalised(rows, query, seed):
    cfg = ForestConfig.from_table(3, 10_000, 2, 3, seed=seed)
    f = MondrianForest(cfg)
    for a, b, label in rows:
        f.partial_fit([a, b], label)
    p = f.predict_proba(list(query))
    assert abs(p.sum() - 1.0) <= 1e-9
    assert (p >= 0).all()


def test_predict_tie_goes_to_smallest_index():
    cfg = ForestConfig(n_trees=1, memory_bytes=node_bytes(1).total, n_features=1, n_classes=3, discount=0.0)
    f = MondrianForest(cfg)
    f.partial_fit([0.0], 2)
    f.partial_fit([0.0], 1)
    assert f.predict([0.0]) == 1


def test_deterministic_under_seed():
    X, y = blobs(n=500)
    a = MondrianForest(config(seed=99)).fit_stream(X, y)
    b = MondrianForest(config(seed=99)).fit_stream(X, y)
    c = MondrianForest(config(seed=100)).fit_stream(X, y)
    ea, eb, ec = a.export(), b.export(), c.export()
    assert all(np.array_equal(ea[k], eb[k]) for k in ea)
    assert not all(np.array_equal(ea[k], ec[k]) for k in ea if ea[k].shape == ec[k].shape)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernel not built")
@pytest.mark.parametrize("mode", [
    InstrumentationMode(),
    InstrumentationMode.node(3, 4),
    InstrumentationMode.whole(5, 11),
    InstrumentationMode.whole(52, 11),
])
def test_backends_agree(mode):
    X, y = blobs(n=400)
    X = X / 4
    preds, exports, counters = [], [], []
    for backend in BACKENDS:
        f = MondrianForest(config(mode=mode, memory_bytes=15_000), backend=backend)
        preds.append(f.prequential_predictions(X, y))
        exports.append(f.export())
        counters.append(f.counters())
    np.testing.assert_array_equal(preds[0], preds[1])
    for k in exports[0]:
        np.testing.assert_array_equal(exports[0][k], exports[1][k], err_msg=k)
    assert counters[0] == counters[1]


def test_dimension_and_label_checks():
    f = MondrianForest(config())
    with pytest.raises(DimensionMismatch):
        f.partial_fit([1.0, 2.0], 0)
    with pytest.raises(DimensionMismatch):
        f.predict_proba([1.0])
    with pytest.raises(ValueError):
        f.partial_fit([0, 0, 0, 0], 3)


def test_budget_too_small_for_roots():
    with pytest.raises(ValueError):
        MondrianForest(ForestConfig.from_table(5, node_bytes(4).total * 4, 4, 3))


def test_config_validation():
    with pytest.raises(ValueError):
        config(discount=1.5)
    with pytest.raises(ValueError):
        config(budget=0.0)
    with pytest.raises(ValueError):
        config(base_count=-1.0)


def test_table_rows():
    assert ForestConfig.from_table(1, 10**6, 12, 5).budget == 1.0
    assert ForestConfig.from_table(50, 10**6, 12, 5).budget == 0.2
    row = ForestConfig.from_table(10, 10**6, 12, 5)
    assert (row.base_count, row.discount, row.budget) == (0.0, 1.0, 0.4)


def test_node_size_model():
    assert node_bytes(12) == (192, 192, 384)
    assert node_bytes(12, PrecisionFormat(3, 4)) == (192, 24, 216)
    cfg = ForestConfig.from_table(5, 384_000, 12, 5)
    full = footprint_bytes(cfg, BINARY64)
    assert full.total == 384_000 and full.int_bytes == full.float_bytes
    half = footprint_bytes(cfg, PrecisionFormat(23, 8))
    assert full.total * 3 == half.total * 4


def test_pool_capacity_ignores_emulated_format():
    plain = ForestConfig.from_table(5, 300_000, 12, 10)
    node = ForestConfig.from_table(5, 300_000, 12, 10, mode=InstrumentationMode.node(3, 4))
    assert plain.capacity_nodes == node.capacity_nodes == 781
    assert node.modeled_node_bytes == 216


def test_pure_python_fallback_selected_by_environment():
    import os
    import subprocess
    import sys

    env = dict(os.environ, VPMONDRIAN_PURE="1")
    code = "import vpmondrian; print(vpmondrian.BACKEND, vpmondrian.MondrianForest is not None)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "True"]
