import numpy as np
import pytest

from drmea.anchors import compute_anchors, refresh, save_anchors_csv
from drmea.data import Dataset
from drmea.model import forward, init_network


def _source(rng, c=2, per=2, d=3):
    X = rng.standard_normal((d, c * per))
    return Dataset(X, np.repeat(np.arange(c), per), c)


def test_constant_network_gives_constant_means(rng):
    net = init_network([3, 4, 2, 2], seed=0)
    for k in net.params:
        net.params[k][:] = 0
    net.params["layer1.bias"][:] = 0.5
    store = compute_anchors(net, _source(rng))
    np.testing.assert_allclose(store.layers[0].class_means, 0.5)
    np.testing.assert_allclose(store.layers[1].class_means, 0.0)


def test_means_match_loop(rng):
    net = init_network([3, 4, 2, 2], seed=1)
    src = _source(rng)
    store = compute_anchors(net, src, batch_size=3)
    for l in range(2):
        for k in range(2):
            cols = [forward(net, src.features[:, [j]]).h[l][:, 0] for j in range(4) if src.labels[j] == k]
            np.testing.assert_allclose(store.layers[l].class_means[:, k], sum(cols) / len(cols), atol=1e-14)


def test_total_mean_is_sample_weighted(rng):
    net = init_network([3, 5, 4, 3], seed=2)
    X = rng.standard_normal((3, 10))
    y = np.array([0] * 6 + [1] * 3 + [2])
    store = compute_anchors(net, Dataset(X, y, 3))
    counts = np.bincount(y)
    for la, h in zip(store.layers, forward(net, X).h):
        np.testing.assert_allclose(la.total_mean, la.class_means @ counts / counts.sum(), atol=1e-12)
        np.testing.assert_allclose(la.total_mean, h.mean(axis=1), atol=1e-10)


def test_empty_class_is_error(rng):
    net = init_network([3, 4, 2, 3])
    with pytest.raises(ValueError):
        compute_anchors(net, Dataset(rng.standard_normal((3, 4)), np.array([0, 0, 1, 1]), 3))


def test_refresh(rng):
    net = init_network([3, 4, 2, 2], seed=3)
    src = _source(rng)
    s0 = compute_anchors(net, src)
    s1 = refresh(s0, net, src, 1)
    assert s1.epoch_tag == 1
    for a, b in zip(s0.layers, s1.layers):
        assert np.array_equal(a.class_means, b.class_means)
    net.params["layer1.weight"] += 0.1
    s2 = refresh(s1, net, src, 2)
    assert not np.array_equal(s2.layers[0].class_means, s1.layers[0].class_means)
    with pytest.raises(ValueError):
        refresh(s2, net, src, 2)


def test_anchor_csv(tmp_path, rng):
    net = init_network([3, 4, 2, 2], seed=3)
    save_anchors_csv(compute_anchors(net, _source(rng)), tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "layer,class,dim,value"
    assert len(lines) == 1 + (4 * 3 + 2 * 3)
