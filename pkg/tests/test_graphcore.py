import dataclasses
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphicl.errors import ConfigError, DimensionError, NumericError, ParseError, ValidationError
from graphicl.graphcore import (
    CorpusSpec,
    DomainSpec,
    Graph,
    KnowledgeGraph,
    generate_corpus,
    graph_distance,
    line_graph_transform,
    normalize_adjacency,
    read_graph,
    read_knowledge_graph,
    read_matrix,
    unify_features,
    write_graph,
    write_knowledge_graph,
    write_matrix,
)
from graphicl.selftest import random_graph


def dense_normalized(g):
    a = np.eye(g.num_nodes)
    for u, v in g.edges:
        a[u, v] = a[v, u] = 1.0
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def path3():
    return Graph(3, [[0, 1], [1, 2]], np.eye(3), [0, 1, 0], 2)


# ---- normalize_adjacency


def test_isolated_node():
    g = Graph(1, np.zeros((0, 2)), np.ones((1, 2)), [0], 1)
    assert np.array_equal(normalize_adjacency(g).todense(), [[1.0]])


def test_single_edge_all_half():
    g = Graph(2, [[0, 1]], np.ones((2, 2)), [0, 0], 1)
    assert np.array_equal(normalize_adjacency(g).todense(), np.full((2, 2), 0.5))


def test_path_matches_dense_oracle():
    g = path3()
    a = normalize_adjacency(g).todense()
    np.testing.assert_allclose(a, dense_normalized(g), atol=1e-12)
    assert np.array_equal(a, a.T)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
def test_spectral_radius_at_most_one(n, p, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 2, 1, p)
    a = normalize_adjacency(g).todense()
    assert np.array_equal(a, a.T)
    x = rng.normal(size=n)
    lam = 0.0
    for _ in range(200):
        y = a @ x
        lam = np.linalg.norm(y) / np.linalg.norm(x)
        x = y / np.linalg.norm(y)
    assert lam <= 1 + 1e-9
    assert np.max(np.abs(np.linalg.eigvalsh(a))) <= 1 + 1e-9


# ---- unify_features


def test_full_rank_preserves_inner_products(rng):
    x = np.eye(5) + 0.1 * rng.normal(size=(5, 5))
    out = unify_features(x, 5)
    np.testing.assert_allclose(out @ out.T, x @ x.T, atol=1e-12)


def test_rank_one_pads_with_zeros():
    x = np.outer([1.0, 2.0, 3.0, 4.0], [1.0, -1.0, 2.0])
    out = unify_features(x, 3)
    assert np.array_equal(out[:, 1:], np.zeros((4, 2)))
    assert np.any(out[:, 0])


def test_random_gram_matches_best_rank_k(rng):
    x = rng.normal(size=(6, 10))
    out = unify_features(x, 4)
    u, s, vt = np.linalg.svd(x)
    best = (u[:, :4] * s[:4]) @ vt[:4]
    np.testing.assert_allclose(out @ out.T, best @ best.T, atol=1e-8)


def test_narrow_input_zero_padded(rng):
    out = unify_features(rng.normal(size=(8, 3)), 6)
    assert out.shape == (8, 6)
    assert np.array_equal(out[:, 3:], np.zeros((8, 3)))


def test_columns_descending(rng):
    out = unify_features(rng.normal(size=(20, 7)), 7)
    norms = np.linalg.norm(out, axis=0)
    assert np.all(np.diff(norms) <= 1e-12)


def test_right_sign_rule(rng):
    x = rng.normal(size=(9, 6))
    out = unify_features(x, 6, sign="right")
    for k in range(6):
        s2 = out[:, k] @ out[:, k]
        v = x.T @ out[:, k] / s2  # right singular vector with the chosen sign
        assert v[np.argmax(np.abs(v))] > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 12), st.integers(2, 6), st.integers(0, 2 ** 31))
def test_data_sign_rule_basis_invariant(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) + rng.exponential(size=(n, d))
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    a = unify_features(x, d, sign="data")
    b = unify_features(x @ q, d, sign="data")
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_unify_rejects_nonfinite():
    with pytest.raises(NumericError):
        unify_features(np.array([[1.0, np.nan]]), 2)


def test_unify_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        unify_features(np.ones((2, 2)), 0)
    with pytest.raises(ConfigError):
        unify_features(np.ones((2, 2)), 2, sign="left")


# ---- line graph


def kg(triples, relations=None, n=None, rng=None):
    triples = np.array(triples)
    n = n or int(max(triples[:, 0].max(), triples[:, 2].max())) + 1
    rng = rng or np.random.default_rng(0)
    return KnowledgeGraph(n, triples, rng.normal(size=(n, 4)), relations or int(triples[:, 1].max()) + 1)


def brute_force_edges(triples):
    out = set()
    for i, j in combinations(range(len(triples)), 2):
        if {triples[i][0], triples[i][2]} & {triples[j][0], triples[j][2]}:
            out.add((i, j))
    return out


def test_line_graph_shared_entity():
    g = line_graph_transform(kg([[0, 0, 1], [1, 1, 2]]))
    assert g.num_nodes == 2
    assert g.edges.tolist() == [[0, 1]]
    assert g.labels.tolist() == [0, 1]


def test_line_graph_disjoint():
    g = line_graph_transform(kg([[0, 0, 1], [2, 0, 3], [4, 0, 5]]))
    assert g.num_nodes == 3 and len(g.edges) == 0


def test_line_graph_star_is_complete():
    g = line_graph_transform(kg([[0, 0, 1], [0, 1, 2], [0, 0, 3], [0, 1, 4]]))
    assert {tuple(e) for e in g.edges} == set(combinations(range(4), 2))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 25), st.integers(2, 10), st.integers(0, 2 ** 31))
def test_line_graph_matches_brute_force(t, n, seed):
    rng = np.random.default_rng(seed)
    triples = np.stack([rng.integers(0, n, t), rng.integers(0, 3, t), rng.integers(0, n, t)], axis=1)
    k = KnowledgeGraph(n, triples, rng.normal(size=(n, 3)), 3)
    g = line_graph_transform(k, d_o=8)
    assert g.num_nodes == t
    assert {tuple(e) for e in g.edges} == brute_force_edges(triples.tolist())
    assert g.feature_dim == 8
    assert np.array_equal(g.labels, triples[:, 1])


def test_line_graph_features_are_centered_pca(rng):
    k = kg([[0, 0, 1], [1, 1, 2], [2, 0, 3], [3, 1, 0]], rng=rng)
    g = line_graph_transform(k, d_o=8)
    x = np.concatenate([k.features[k.triples[:, 0]], k.features[k.triples[:, 2]]], axis=1)
    xc = x - x.mean(axis=0)
    np.testing.assert_allclose(g.features @ g.features.T, xc @ xc.T, atol=1e-10)


# ---- graph_distance


def test_distance_to_self_is_zero(rng):
    g = random_graph(rng, 6, 3, 2)
    assert graph_distance(g, g) == 0.0


def test_distance_single_entry_shift(rng):
    g = random_graph(rng, 6, 3, 2)
    x = g.features.copy()
    x[2, 1] += 0.375
    assert graph_distance(g, g.with_features(x)) == pytest.approx(0.375, abs=1e-15)


def test_distance_matches_dense_oracle(rng):
    g1, g2 = random_graph(rng, 5, 3, 2), random_graph(rng, 5, 3, 2)
    expected = np.linalg.norm(g1.features - g2.features) + np.linalg.norm(dense_normalized(g1) - dense_normalized(g2))
    assert abs(graph_distance(g1, g2) - expected) <= 1e-12


def test_distance_pads_isolated_nodes(rng):
    g1, g2 = random_graph(rng, 4, 2, 2), random_graph(rng, 6, 2, 2)
    x1 = np.zeros((6, 2))
    x1[:4] = g1.features
    a1 = np.eye(6)
    a1[:4, :4] = dense_normalized(g1)
    expected = np.linalg.norm(x1 - g2.features) + np.linalg.norm(a1 - dense_normalized(g2))
    assert abs(graph_distance(g1, g2) - expected) <= 1e-12


def test_distance_width_mismatch(rng):
    with pytest.raises(DimensionError):
        graph_distance(random_graph(rng, 4, 2, 2), random_graph(rng, 4, 3, 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 31))
def test_distance_pseudometric(n, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_graph(rng, n, 3, 2) for _ in range(3))
    assert graph_distance(a, b) == graph_distance(b, a)
    assert graph_distance(a, c) <= graph_distance(a, b) + graph_distance(b, c) + 1e-9


# ---- corpus generation


def spec_of(*domains, **kw):
    return CorpusSpec(tuple(domains), latent_dim=8, centroid_scale=2.0, **kw)


def test_single_domain_distance_matrix():
    c = generate_corpus(spec_of(DomainSpec(num_classes=3, nodes_per_class=10, feature_dim=8)))
    assert c.distances.tolist() == [[0.0]]
    assert len(c.graphs) == 1


def test_identical_domains_zero_distance():
    d = DomainSpec(num_classes=3, nodes_per_class=10, feature_dim=8, seed=4)
    c = generate_corpus(spec_of(d, d))
    assert c.distances[0, 1] == 0.0


def test_rotation_monotone_distances():
    base = DomainSpec(num_classes=3, nodes_per_class=20, feature_dim=16, seed=1)
    doms = [dataclasses.replace(base, rotation=r, seed=i + 1) for i, r in enumerate((0.0, 0.5, 1.0))]
    c = generate_corpus(spec_of(*doms))
    assert 0 < c.distances[0, 1] < c.distances[0, 2]


def test_corpus_deterministic():
    doms = (DomainSpec(num_classes=3, nodes_per_class=10, feature_dim=8, seed=1),
            DomainSpec(num_classes=2, nodes_per_class=12, feature_dim=12, rotation=0.3, seed=2))
    a, b = generate_corpus(spec_of(*doms)), generate_corpus(spec_of(*doms))
    assert all(x == y for x, y in zip(a.graphs, b.graphs))
    assert a.distances.tobytes() == b.distances.tobytes()


def test_corpus_structure():
    c = generate_corpus(spec_of(DomainSpec(num_classes=4, nodes_per_class=15, feature_dim=10, p_in=0.3, p_out=0.0)))
    g = c.graphs[0]
    assert g.num_nodes == 60 and g.feature_dim == 10
    assert np.array_equal(np.bincount(g.labels), [15] * 4)
    # p_out = 0: every edge stays inside a class
    assert np.all(g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]])


def test_corpus_spec_validation():
    with pytest.raises(ConfigError, match="below between-class"):
        generate_corpus(spec_of(DomainSpec(p_in=0.01, p_out=0.1)))
    with pytest.raises(ConfigError):
        generate_corpus(spec_of())
    with pytest.raises(ConfigError):
        generate_corpus(spec_of(DomainSpec(num_classes=0)))
    with pytest.raises(ConfigError):
        generate_corpus(spec_of(DomainSpec(num_classes=6), nuisance_dims=3))


# ---- io


def test_graph_round_trip(tmp_path):
    g = Graph(3, [[0, 1], [1, 2]], np.array([[0.1, -2.0], [np.pi, 1e-300], [5.0, -0.0]]), [0, -1, 1], 2)
    write_graph(g, tmp_path / "g.gia")
    h = read_graph(tmp_path / "g.gia")
    assert h == g
    assert h.features.tobytes() == g.features.tobytes()
    assert h.name == "g"


def test_truncated_graph_file(tmp_path, rng):
    g = random_graph(rng, 5, 3, 2)
    write_graph(g, tmp_path / "g.gia")
    data = (tmp_path / "g.gia").read_bytes()
    for cut in (5, len(data) // 2, len(data) - 3):
        (tmp_path / "t.gia").write_bytes(data[:cut])
        with pytest.raises(ParseError) as err:
            read_graph(tmp_path / "t.gia")
        assert err.value.offset is not None and 0 <= err.value.offset <= cut
        assert "offset" in str(err.value)


def test_bad_magic(tmp_path):
    (tmp_path / "x.gia").write_bytes(b"NOPE nodes=1\n")
    with pytest.raises(ParseError):
        read_graph(tmp_path / "x.gia")


def test_label_out_of_range_names_node(tmp_path):
    g = Graph(3, np.zeros((0, 2)), np.zeros((3, 1)), [0, 1, 1], 2)
    write_graph(g, tmp_path / "g.gia")
    data = (tmp_path / "g.gia").read_bytes().replace(b"classes=2", b"classes=1")
    (tmp_path / "bad.gia").write_bytes(data)
    with pytest.raises(ValidationError, match="node 1"):
        read_graph(tmp_path / "bad.gia")


def test_knowledge_graph_round_trip(tmp_path, rng):
    k = kg([[0, 0, 1], [1, 2, 3], [3, 1, 0]], rng=rng)
    write_knowledge_graph(k, tmp_path / "k.gia")
    assert read_knowledge_graph(tmp_path / "k.gia") == k


def test_matrix_round_trip(tmp_path, rng):
    m = rng.normal(size=(4, 3))
    write_matrix(tmp_path / "m.bin", m)
    assert read_matrix(tmp_path / "m.bin").tobytes() == m.tobytes()
