import dataclasses

import numpy as np
import pytest

from graphicl.graphcore import (
    CorpusSpec,
    DomainSpec,
    fewshot_corpus_spec,
    generate_corpus,
    unify_graph,
)
from graphicl.trainer import TrainConfig, pretrain

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def unified(spec):
    return [unify_graph(g, 64, sign="data") for g in generate_corpus(spec).graphs]


@pytest.fixture(scope="session")
def fewshot_graphs():
    """Four pretraining domains and the held-out domain, all unified to width 64."""
    graphs = unified(fewshot_corpus_spec())
    return graphs[:4], graphs[4]


@pytest.fixture(scope="session")
def fewshot_result(fewshot_graphs):
    train, _ = fewshot_graphs
    return pretrain(train, TrainConfig(m=5, k=5, T=5, episodes=2000, seed=0))


@pytest.fixture(scope="session")
def fewshot_bundle(fewshot_result):
    return fewshot_result.bundle


@pytest.fixture(scope="session")
def separable_graphs():
    spec = dataclasses.replace(fewshot_corpus_spec(), nuisance_dims=0, nuisance_scale=0.0)
    graphs = unified(spec)
    return graphs[:4], graphs[4]


@pytest.fixture(scope="session")
def separable_bundle(separable_graphs):
    train, _ = separable_graphs
    return pretrain(train, TrainConfig(m=5, k=5, T=5, episodes=2000, seed=0)).bundle


def tiny_spec(seed=0, nodes=20):
    domains = tuple(
        DomainSpec(num_classes=3, nodes_per_class=nodes, feature_dim=64, rotation=0.4 * i, shift=1.0 * i,
                   p_in=0.2, p_out=0.02, seed=seed + i + 1, name=f"tiny{i}")
        for i in range(3)
    )
    return CorpusSpec(domains, latent_dim=8, centroid_scale=3.0, base_seed=seed)


@pytest.fixture(scope="session")
def tiny_graphs():
    return unified(tiny_spec())


@pytest.fixture(scope="session")
def tiny_config():
    return TrainConfig(m=3, k=3, T=3, episodes=60, seed=0, embedder_iters=100)


@pytest.fixture(scope="session")
def tiny_result(tiny_graphs, tiny_config):
    return pretrain(tiny_graphs, tiny_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
