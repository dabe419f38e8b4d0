"""Synthetic multi-domain node-classification corpora.

All domains share one set of latent class centroids (drawn from
``base_seed``), so a label id means the same thing everywhere. Each domain
rotates the centroids by ``exp(t * A)`` along a shared skew-symmetric
generator ``A``, adds a shift of fixed direction, lifts the result into its
own feature width and samples noisy node features around it. Edges follow a
stochastic block model over the classes.

Domain prototypes reuse one common noise and edge draw for every domain, so
distances between prototypes reflect only the domain transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from graphicl.errors import ConfigError
from graphicl.graphcore.features import unify_features
from graphicl.graphcore.graph import Graph, graph_distance


@dataclass(frozen=True)
class DomainSpec:
    num_classes: int = 5
    nodes_per_class: int = 60
    feature_dim: int = 64
    spread: float = 1.0
    rotation: float = 0.0
    shift: float = 0.0
    p_in: float = 0.05
    p_out: float = 0.005
    seed: int = 0
    name: str = ""

    def validate(self):
        if self.num_classes < 1 or self.nodes_per_class < 1 or self.feature_dim < 1:
            raise ConfigError("class count, nodes per class and feature width must be positive")
        if self.spread < 0:
            raise ConfigError("spread must be nonnegative")
        if not (0.0 <= self.p_out <= 1.0 and 0.0 <= self.p_in <= 1.0):
            raise ConfigError("edge probabilities must lie in [0, 1]")
        if self.p_in < self.p_out:
            raise ConfigError(
                f"within-class edge probability {self.p_in} is below between-class probability {self.p_out}"
            )


@dataclass(frozen=True)
class CorpusSpec:
    domains: tuple = field(default_factory=tuple)
    latent_dim: int = 16
    centroid_scale: float = 1.0
    centroid_decay: float = 0.8
    nuisance_dims: int = 0
    nuisance_scale: float = 0.0
    base_seed: int = 0

    def validate(self):
        if not self.domains:
            raise ConfigError("corpus needs at least one domain")
        if self.latent_dim < 1 or self.centroid_scale <= 0:
            raise ConfigError("latent_dim and centroid_scale must be positive")
        if not 0.0 < self.centroid_decay <= 1.0:
            raise ConfigError("centroid_decay must lie in (0, 1]")
        if max(d.num_classes for d in self.domains) + self.nuisance_dims > self.latent_dim:
            raise ConfigError("latent_dim must cover the largest class count plus nuisance_dims")
        if self.nuisance_dims < 0 or self.nuisance_scale < 0:
            raise ConfigError("nuisance_dims and nuisance_scale must be nonnegative")
        for d in self.domains:
            d.validate()


@dataclass
class SyntheticCorpus:
    graphs: list
    prototypes: list
    distances: np.ndarray


class _Basis:
    """Quantities shared by every domain of a corpus."""

    def __init__(self, spec: CorpusSpec):
        rng = np.random.default_rng([spec.base_seed, 0])
        max_classes = max(d.num_classes for d in spec.domains)
        L = spec.latent_dim
        # orthogonal centroid directions with geometrically decaying norms keep
        # the leading singular directions well separated in every domain
        q, _ = np.linalg.qr(rng.normal(size=(L, max_classes + spec.nuisance_dims)))
        norms = spec.centroid_scale * np.sqrt(L) * spec.centroid_decay ** np.arange(max_classes)
        self.centroids = norms[:, None] * q[:, :max_classes].T
        # class-independent high-variance directions, orthogonal to the centroids
        self.nuisance = spec.nuisance_scale * q[:, max_classes:].T
        a = rng.normal(size=(L, L))
        a = a - a.T
        self.generator = a / max(np.linalg.norm(a, 2), 1e-12)
        s = rng.normal(size=L)
        self.shift_dir = s / np.linalg.norm(s)
        self.base_seed = spec.base_seed
        self._lifts = {}

    def lift(self, width: int) -> np.ndarray:
        if width not in self._lifts:
            L = self.centroids.shape[1]
            rng = np.random.default_rng([self.base_seed, 1, width])
            q, _ = np.linalg.qr(rng.normal(size=(max(L, width), max(L, width))))
            self._lifts[width] = q[:L, :width]
        return self._lifts[width]


def _sbm_edges(labels, p_in, p_out, rng) -> np.ndarray:
    classes = np.unique(labels)
    members = [np.flatnonzero(labels == c) for c in classes]
    chunks = []
    for i, a in enumerate(members):
        for j in range(i, len(members)):
            b = members[j]
            p = p_in if i == j else p_out
            if p <= 0:
                continue
            if i == j:
                iu, ju = np.triu_indices(len(a), 1)
                total = len(iu)
            else:
                total = len(a) * len(b)
            k = rng.binomial(total, p)
            if k == 0:
                continue
            pick = rng.choice(total, size=k, replace=False)
            if i == j:
                chunks.append(np.stack([a[iu[pick]], a[ju[pick]]], axis=1))
            else:
                chunks.append(np.stack([a[pick // len(b)], b[pick % len(b)]], axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    edges = np.concatenate(chunks)
    edges = np.sort(edges, axis=1)
    return edges[np.lexsort((edges[:, 1], edges[:, 0]))]


def _domain_graph(basis: _Basis, d: DomainSpec, rng, name: str) -> Graph:
    labels = np.repeat(np.arange(d.num_classes), d.nodes_per_class)
    rot = expm(d.rotation * basis.generator)
    n = len(labels)
    latent = basis.centroids[: d.num_classes][labels]
    if len(basis.nuisance):
        latent = latent + rng.normal(size=(n, len(basis.nuisance))) @ basis.nuisance
    latent = latent @ rot + d.shift * basis.shift_dir
    x = latent @ basis.lift(d.feature_dim) + d.spread * rng.normal(size=(n, d.feature_dim))
    edges = _sbm_edges(labels, d.p_in, d.p_out, rng)
    return Graph(len(labels), edges, x, labels, d.num_classes, name=name)


def generate_corpus(spec: CorpusSpec) -> SyntheticCorpus:
    """Sample one graph per domain plus the prototype distance matrix."""
    spec.validate()
    basis = _Basis(spec)
    graphs, prototypes = [], []
    for i, d in enumerate(spec.domains):
        name = d.name or f"domain{i}"
        graphs.append(_domain_graph(basis, d, np.random.default_rng([d.seed, 2]), name))
        prototypes.append(_domain_graph(basis, d, np.random.default_rng([spec.base_seed, 3]), name))

    widths = {p.feature_dim for p in prototypes}
    if len(widths) > 1:
        width = max(widths)
        prototypes = [p.with_features(unify_features(p.features, width, sign="data")) for p in prototypes]

    m = len(prototypes)
    dist = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            dist[i, j] = dist[j, i] = graph_distance(prototypes[i], prototypes[j])
    return SyntheticCorpus(graphs, prototypes, dist)


def fewshot_corpus_spec(base_seed: int = 7) -> CorpusSpec:
    """Four pretraining domains plus one held-out domain (the last), 5 classes x 60 nodes.

    Domains differ in rotation, shift and raw feature width. Three
    class-independent nuisance directions dominate the variance, so a
    cosine over raw aligned features is a weak metric and a learned one
    has room to help.
    """
    grid = [(0.0, 0.0, 64), (0.4, 0.5, 48), (0.8, 1.0, 80), (1.2, 1.5, 64), (0.6, 0.75, 64)]
    domains = tuple(
        DomainSpec(rotation=r, shift=sh, feature_dim=w, seed=i + 1, name=f"domain{i}" if i < 4 else "heldout")
        for i, (r, sh, w) in enumerate(grid)
    )
    return CorpusSpec(domains, latent_dim=16, centroid_scale=3.0, centroid_decay=0.85,
                      nuisance_dims=3, nuisance_scale=12.0, base_seed=base_seed)


def graded_corpus_spec(count: int = 6, rotation_step: float = 0.3, shift_step: float = 4.0,
                       base_seed: int = 7) -> CorpusSpec:
    """Domains whose rotation and shift grow in equal steps from a common base."""
    domains = tuple(DomainSpec(rotation=rotation_step * i, shift=shift_step * i, seed=i + 1, name=f"grade{i}")
                    for i in range(count))
    return CorpusSpec(domains, latent_dim=16, centroid_scale=3.0, centroid_decay=0.85,
                      nuisance_dims=3, nuisance_scale=12.0, base_seed=base_seed)
