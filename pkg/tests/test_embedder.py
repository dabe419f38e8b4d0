import numpy as np
import pytest

from graphicl.embedder import (
    EmbedderArch,
    EmbedderConfig,
    EmbedderParams,
    embed_domain,
    embed_many,
    in_context_embedding,
    lde_loss,
    lipschitz_estimate,
    train_embedder,
)
from graphicl.encoder import Fingerprint, fingerprint
from graphicl.errors import ConfigError, DimensionError, InputError, TrainingError
from graphicl.graphcore import CorpusSpec, DomainSpec, generate_corpus, unify_graph

SMALL = EmbedderArch(in_shape=(16, 16), d_e=8)


def naive_conv(x, w, b, stride):
    c_out, c_in, kh, kw = w.shape
    h = (x.shape[1] - kh) // stride + 1
    wd = (x.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += w[o, c, u, v] * x[c, i * stride + u, j * stride + v]
                out[o, i, j] = acc
    return out


def naive_embed(delta, params):
    p, arch = params.arrays, params.arch
    h = delta[None]
    for i in range(1, len(arch.channels) + 1):
        h = np.maximum(naive_conv(h, p[f"conv{i}_w"], p[f"conv{i}_b"], arch.stride), 0)
    return h.reshape(-1) @ p["fc_w"] + p["fc_b"]


def test_default_architecture():
    arch = EmbedderArch()
    assert arch.in_shape == (64, 64) and arch.channels == (8, 16) and arch.kernel == 3 and arch.stride == 2
    assert arch.d_e == 64
    assert arch.conv_output() == (16, 15, 15)
    assert EmbedderArch.from_dict(arch.as_dict()) == arch


def test_zero_fingerprint_zero_embedding():
    params = EmbedderParams.init(EmbedderArch(), seed=1)
    assert not np.any(embed_domain(np.zeros((64, 64)), params).vector)


def test_identical_fingerprints_identical_embeddings(rng):
    params = EmbedderParams.init(SMALL, seed=2)
    d = rng.normal(size=(16, 16))
    a, b = embed_many([d, d.copy()], params)
    assert a.tobytes() == b.tobytes()


def test_matches_naive_convolution(rng):
    params = EmbedderParams.init(SMALL, seed=3)
    for arr in params.arrays.values():
        arr += 0.1 * rng.normal(size=arr.shape)
    for _ in range(3):
        d = rng.normal(size=(16, 16))
        np.testing.assert_allclose(embed_domain(d, params).vector, naive_embed(d, params), atol=1e-10)


def test_default_arch_naive_oracle(rng):
    params = EmbedderParams.init(EmbedderArch(), seed=0)
    d = rng.normal(size=(64, 64)) * 0.01
    np.testing.assert_allclose(embed_domain(d, params).vector, naive_embed(d, params), atol=1e-10)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        embed_domain(np.zeros((8, 8)), EmbedderParams.init(SMALL))


def test_lde_loss_examples(rng):
    same = [np.ones((4, 4))] * 3
    assert lde_loss(same, [np.zeros(2)] * 3) == 0.0
    a = np.zeros((2, 2))
    b = a.copy()
    b[0, 0] = 3.0
    assert lde_loss([a, b], [np.zeros(3), np.array([1.0, 0.0, 0.0])]) == 8.0


def test_lde_loss_rotation_invariant(rng):
    fps = [rng.normal(size=(5, 5)) for _ in range(4)]
    emb = [rng.normal(size=6) for _ in range(4)]
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    assert lde_loss(fps, emb) == pytest.approx(lde_loss(fps, [q @ e for e in emb]), rel=1e-12)


def test_lde_loss_needs_two():
    with pytest.raises(ConfigError):
        lde_loss([np.zeros((2, 2))], [np.zeros(2)])
    with pytest.raises(ConfigError):
        lde_loss([np.zeros((2, 2))] * 2, [np.zeros(2)])


def test_two_fingerprints_distance_recovered(rng):
    fps = [rng.normal(size=(16, 16)) * 0.1 for _ in range(2)]
    fit = train_embedder(fps, SMALL, EmbedderConfig(lr=0.01, max_iter=500))
    e = embed_many(fps, fit.params)
    target = np.linalg.norm(fps[0] - fps[1])
    assert abs(np.linalg.norm(e[0] - e[1]) - target) <= 0.05 * target


def test_euclidean_triple_embeds(rng):
    # distances 3, 4, 5 between three fingerprints
    base = np.zeros((16, 16))
    a, b, c = base.copy(), base.copy(), base.copy()
    b[0, 0] = 3.0
    c[1, 1] = 4.0
    fit = train_embedder([a, b, c], SMALL, EmbedderConfig(lr=0.01, max_iter=2000, tol=0.0))
    assert fit.final_loss <= 1e-3 * fit.initial_loss


def test_training_deterministic(rng):
    fps = [rng.normal(size=(16, 16)) for _ in range(3)]
    cfg = EmbedderConfig(max_iter=50, seed=5)
    a, b = train_embedder(fps, SMALL, cfg), train_embedder(fps, SMALL, cfg)
    assert all(a.params.arrays[k].tobytes() == b.params.arrays[k].tobytes() for k in a.params.arrays)
    assert a.losses == b.losses


def test_training_stops_on_plateau(rng):
    fps = [np.zeros((16, 16))] * 3
    fit = train_embedder(fps, SMALL, EmbedderConfig(max_iter=2000, window=50))
    # zero loss from the start: no improvement, stop after one window
    assert len(fit.losses) == 51


def test_training_divergence_reported():
    fps = [np.zeros((16, 16)), np.full((16, 16), 1e200)]
    with pytest.raises(TrainingError, match="iteration 0"):
        train_embedder(fps, SMALL)


def test_training_needs_two():
    with pytest.raises(ConfigError):
        train_embedder([np.zeros((16, 16))], SMALL)


def test_lipschitz_estimate_bounds_pairs(rng):
    params = EmbedderParams.init(SMALL, seed=4)
    L = lipschitz_estimate(params)
    for _ in range(50):
        a, b = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
        ea, eb = embed_many([a, b], params)
        assert np.linalg.norm(ea - eb) <= L * np.linalg.norm(a - b) + 1e-12


def test_lipschitz_holds_for_trained(tiny_result, rng):
    params = tiny_result.bundle.embedder
    L = lipschitz_estimate(params)
    for _ in range(20):
        a, b = rng.normal(size=(64, 64)) * 0.01, rng.normal(size=(64, 64)) * 0.01
        ea, eb = embed_many([a, b], params)
        assert np.linalg.norm(ea - eb) <= L * np.linalg.norm(a - b)


def test_full_support_equals_stage_a(tiny_graphs, tiny_result):
    b = tiny_result.bundle
    for i, g in enumerate(tiny_graphs):
        items = g.labeled_nodes
        e = in_context_embedding(g, items, g.labels[items], b.encoder.theta0, b.embedder, b.eta,
                                 num_classes=g.num_classes)
        assert e.vector.tobytes() == b.domain_embeddings[i].tobytes()


def test_zero_eta_constant_embedding(tiny_graphs, tiny_result):
    b = tiny_result.bundle
    zero = embed_domain(np.zeros(b.encoder.shape), b.embedder).vector
    for g in tiny_graphs:
        e = in_context_embedding(g, [0, 30], [0, 1], b.encoder.theta0, b.embedder, eta=0.0)
        assert e.vector.tobytes() == zero.tobytes()


def test_empty_support(tiny_graphs, tiny_result):
    b = tiny_result.bundle
    with pytest.raises(InputError):
        in_context_embedding(tiny_graphs[0], [], [], b.encoder.theta0, b.embedder)


def test_new_domain_closer_to_nearby_domain():
    doms = (DomainSpec(num_classes=3, nodes_per_class=30, rotation=0.0, shift=0.0, seed=1, name="A"),
            DomainSpec(num_classes=3, nodes_per_class=30, rotation=1.5, shift=8.0, seed=2, name="B"),
            DomainSpec(num_classes=3, nodes_per_class=30, rotation=0.75, shift=4.0, seed=3, name="mid"),
            DomainSpec(num_classes=3, nodes_per_class=30, rotation=0.1, shift=0.5, seed=4, name="new"))
    corpus = generate_corpus(CorpusSpec(doms, latent_dim=8, centroid_scale=3.0, base_seed=11))
    dist = corpus.distances
    assert dist[3, 1] >= 3 * dist[3, 0]
    graphs = [unify_graph(g, 64, sign="data") for g in corpus.graphs]
    theta0 = np.random.default_rng(0).normal(scale=1 / 8, size=(64, 64))
    fps = [fingerprint(g, theta0=theta0) for g in graphs[:3]]
    fit = train_embedder(fps, EmbedderArch(), EmbedderConfig(max_iter=500))
    eA, eB, _ = embed_many(fps, fit.params)
    new = graphs[3]
    items = np.concatenate([new.nodes_of_class(c)[:5] for c in range(3)])
    e = in_context_embedding(new, items, new.labels[items], theta0, fit.params).vector
    assert np.linalg.norm(e - eA) < np.linalg.norm(e - eB)


def test_fingerprint_objects_accepted(rng):
    params = EmbedderParams.init(SMALL)
    d = rng.normal(size=(16, 16))
    assert np.array_equal(embed_domain(Fingerprint(d, 0.01, 3), params).vector, embed_domain(d, params).vector)
