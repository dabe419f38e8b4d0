import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphicl.encoder import EncoderInit, encode, fingerprint, fingerprint_closed_form
from graphicl.errors import ConfigError, DimensionError, InputError
from graphicl.graphcore import Graph
from graphicl.numkernel import numeric_grad
from graphicl.selftest import random_graph


def dense_adj(g):
    return g.adjacency.todense()


def mean_ce(g, items, labels, theta, C):
    logits = (dense_adj(g)[items] @ g.features @ theta)[:, :C]
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(items)), labels].mean()


def test_zero_theta_zero_embedding(rng):
    g = random_graph(rng, 6, 4, 2)
    assert np.array_equal(encode(g, np.zeros((4, 3))), np.zeros((6, 3)))


def test_isolated_node_encoding(rng):
    g = Graph(2, np.zeros((0, 2)), rng.normal(size=(2, 3)), [0, 1], 2)
    theta = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(encode(g, theta, [1])[0], np.maximum(g.features[1] @ theta, 0))


def test_encode_dense_oracle(rng):
    g = random_graph(rng, 4, 3, 2, p=0.6)
    theta = rng.normal(size=(3, 5))
    np.testing.assert_allclose(encode(g, theta), np.maximum(dense_adj(g) @ g.features @ theta, 0), atol=1e-12)
    np.testing.assert_allclose(encode(g, theta, [2, 0]), encode(g, theta)[[2, 0]], atol=1e-15)


def test_encode_shape_check(rng):
    g = random_graph(rng, 4, 3, 2)
    with pytest.raises(DimensionError):
        encode(g, np.zeros((4, 3)))


def test_encoder_init_deterministic():
    a, b = EncoderInit.create(8, 6, seed=3), EncoderInit.create(8, 6, seed=3)
    assert a.theta0.tobytes() == b.theta0.tobytes()
    assert not a.theta0.flags.writeable
    assert a.shape == (8, 6)


def test_zero_step_zero_fingerprint(rng):
    g = random_graph(rng, 6, 4, 2)
    fp = fingerprint(g, theta0=rng.normal(size=(4, 4)), eta=0.0)
    assert not np.any(fp.delta)


def test_single_node_matches_finite_differences(rng):
    g = random_graph(rng, 5, 3, 2, p=0.5)
    theta = rng.normal(size=(3, 4))
    fp = fingerprint(g, [2], [1], theta0=theta, eta=0.01)
    (num,) = numeric_grad(lambda t: mean_ce(g, np.array([2]), np.array([1]), t, 2), [theta])
    rel = np.linalg.norm(fp.delta - (-0.01 * num)) / np.linalg.norm(fp.delta)
    assert rel <= 1e-4
    assert fp.count == 1 and fp.eta == 0.01


def test_doubling_eta_doubles_delta(rng):
    g = random_graph(rng, 7, 4, 3)
    theta = rng.normal(size=(4, 5))
    a = fingerprint(g, theta0=theta, eta=0.01).delta
    b = fingerprint(g, theta0=theta, eta=0.02).delta
    assert np.array_equal(b, 2 * a)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 10.0), st.floats(1e-4, 10.0), st.integers(0, 2 ** 31))
def test_eta_scaling(eta, eta2, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 6, 3, 2)
    theta = rng.normal(size=(3, 3))
    a = fingerprint(g, theta0=theta, eta=eta).delta
    b = fingerprint(g, theta0=theta, eta=eta2).delta
    np.testing.assert_allclose(a, eta / eta2 * b, rtol=1e-13, atol=0)


def test_too_many_classes(rng):
    g = random_graph(rng, 6, 3, 3)
    with pytest.raises(ConfigError):
        fingerprint(g, theta0=np.zeros((3, 2)))
    with pytest.raises(ConfigError):
        fingerprint_closed_form(g, theta0=np.zeros((3, 2)))


def test_empty_items(rng):
    g = random_graph(rng, 6, 3, 2)
    with pytest.raises(InputError):
        fingerprint(g, [], [], theta0=np.zeros((3, 2)))


def test_item_order_irrelevant(rng):
    g = random_graph(rng, 8, 3, 2)
    theta = rng.normal(size=(3, 3))
    a = fingerprint(g, [1, 4, 6], [1, 0, 1], theta0=theta).delta
    b = fingerprint(g, [6, 1, 4], [1, 1, 0], theta0=theta).delta
    assert np.array_equal(a, b)


def test_closed_form_zero_step(rng):
    g = random_graph(rng, 6, 3, 2)
    assert not np.any(fingerprint_closed_form(g, theta0=rng.normal(size=(3, 3)), eta=0.0).delta)


def test_closed_form_uniform_logits(rng):
    g = random_graph(rng, 9, 4, 3)
    theta = np.zeros((4, 5))
    a = fingerprint(g, theta0=theta).delta
    b = fingerprint_closed_form(g, theta0=theta).delta
    assert np.abs(a - b).max() <= 1e-10
    # hand oracle: G = 1/C - onehot in the first C columns
    G = np.zeros((9, 5))
    G[:, :3] = 1 / 3
    G[np.arange(9), g.labels] -= 1
    expected = -0.01 * g.features.T @ dense_adj(g).T @ G / 9
    assert np.abs(b - expected).max() <= 1e-15


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 12), st.integers(2, 6), st.integers(2, 4), st.integers(0, 2 ** 31))
def test_closed_form_equals_autodiff(n, d, C, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, max(n, C), d, C)
    theta = rng.normal(size=(d, max(C, d)))
    a = fingerprint(g, theta0=theta).delta
    b = fingerprint_closed_form(g, theta0=theta).delta
    assert np.abs(a - b).max() <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 10), st.integers(0, 2 ** 31))
def test_node_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 3, 2, labeled=0.7)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    h = Graph(n, inv[g.edges], g.features[perm], g.labels[perm], g.num_classes)
    theta = rng.normal(size=(3, 3))
    a = fingerprint(g, theta0=theta).delta
    b = fingerprint(h, theta0=theta).delta
    assert np.abs(a - b).max() <= 1e-10
