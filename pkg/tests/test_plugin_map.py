import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condot.conditional_ot import PerturbedCostSpec
from condot.measures import gaussian_sampler
from condot.plugin_map import (
    PluginConditionalMap,
    anchors_from_arrays,
    conditional_sample,
    fit_plugin,
)


def _random_map(n=40, dy=1, dv=2, du=2, k=3, seed=0):
    rng = np.random.default_rng(seed)
    return PluginConditionalMap(rng.normal(size=(n, dy)), rng.normal(size=(n, dv)),
                                rng.normal(size=(n, du)), k)


def test_anchor_hit_returns_anchor():
    m = _random_map()
    for j in (0, 7, 39):
        assert np.array_equal(m.evaluate(m.Y[j], m.V[j]), m.U[j])


def test_equidistant_average():
    m = PluginConditionalMap([[0.0], [0.0]], [[-1.0], [1.0]], [[0.0], [1.0]], k=2)
    assert m.evaluate([0.0], [0.0])[0] == pytest.approx(0.5)


def test_single_anchor_is_constant():
    m = PluginConditionalMap([[0.3]], [[0.1]], [[2.5, -1.0]], k=1)
    out = m.evaluate_batch(np.zeros((5, 1)), np.linspace(-3, 3, 5)[:, None])
    assert np.all(out == [2.5, -1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_output_in_convex_hull_of_neighbours(seed, k):
    m = _random_map(n=30, du=1, k=k, seed=seed)
    rng = np.random.default_rng(seed + 1)
    out = m.evaluate_batch(rng.normal(size=(20, 1)), rng.normal(size=(20, 2)))[:, 0]
    assert np.all(out >= m.U.min() - 1e-12) and np.all(out <= m.U.max() + 1e-12)


def test_validation():
    with pytest.raises(ValueError):
        PluginConditionalMap(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        PluginConditionalMap(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 1)), k=3)
    with pytest.raises(ValueError):
        PluginConditionalMap(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 1)), metric_weights=[1, 0])
    m = _random_map()
    with pytest.raises(ValueError):
        m.evaluate_batch(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        m.Y[0, 0] = 1.0


def test_json_roundtrip():
    m = _random_map(k=2)
    m2 = PluginConditionalMap.from_json(m.to_json())
    q = np.random.default_rng(3).normal(size=(10, 3))
    assert np.array_equal(m.evaluate_batch(q[:, :1], q[:, 1:]), m2.evaluate_batch(q[:, :1], q[:, 1:]))


@pytest.mark.parametrize("dim_v", [2, 20])
def test_tree_and_shortlist_match_brute_force(dim_v):
    rng = np.random.default_rng(4)
    n = 2000
    m = PluginConditionalMap(rng.normal(size=(n, 1)), rng.normal(size=(n, dim_v)),
                             rng.normal(size=(n, 1)), k=3)
    Q = rng.normal(size=(50, 1 + dim_v))
    d, idx = m._neighbours(Q)
    full = np.sqrt(((Q[:, None, :] - m._inputs[None]) ** 2).sum(-1))
    ref = np.argsort(full, axis=1, kind="stable")[:, :3]
    assert np.array_equal(idx, ref)
    assert np.allclose(d, np.take_along_axis(full, ref, 1))


def test_metric_weights_change_neighbours():
    m = PluginConditionalMap([[0.0], [1.0]], [[1.0], [0.0]], [[0.0], [1.0]], k=1)
    assert m.evaluate([0.4], [0.0])[0] == 1.0
    heavy_y = PluginConditionalMap(m.Y, m.V, m.U, 1, [10.0, 1.0])
    assert heavy_y.evaluate([0.4], [0.0])[0] == 0.0


def test_one_dimensional_fit_is_monotone_in_v():
    # with a single y value the perturbed OT reduces to 1D monotone matching
    rng = np.random.default_rng(5)
    U = rng.normal(size=(200, 1))
    m = fit_plugin((np.zeros((200, 1)), U), gaussian_sampler(1), PerturbedCostSpec(0.1), k=1, seed=1)
    order = np.argsort(m.V[:, 0])
    assert np.all(np.diff(m.U[order, 0]) >= 0)
    assert np.array_equal(np.sort(m.U[:, 0]), np.sort(U[:, 0]))


def test_lipschitz_on_grid():
    m = _random_map(n=50, dv=1, du=1, k=2, seed=6)
    grid = np.linspace(-2, 2, 2001)
    out = m.evaluate_batch(np.zeros((grid.size, 1)), grid[:, None])[:, 0]
    # output moves only between neighbour anchor values; no blow-up between nodes
    assert np.all(np.abs(np.diff(out)) <= np.ptp(m.U) + 1e-12)
    assert np.all(np.isfinite(out))


def test_conditional_sample_deterministic():
    m = _random_map(dv=2)
    a = conditional_sample(m, [0.2], 100, gaussian_sampler(2), seed=9)
    b = conditional_sample(m, [0.2], 100, gaussian_sampler(2), seed=9)
    assert a.shape == (100, 2) and np.array_equal(a, b)
    with pytest.raises(ValueError):
        conditional_sample(m, [0.2], 0, gaussian_sampler(2))


def test_anchors_from_arrays():
    m = anchors_from_arrays(np.arange(3.0), np.arange(3.0), np.arange(3.0), k=1)
    assert m.Y.shape == (3, 1) and m.evaluate([1.0], [1.0])[0] == 1.0
