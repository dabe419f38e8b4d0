"""Frozen-parameter in-context prediction on an unseen graph.

The plain path scores every query with the attention pipeline alone. Three
optional refinements stack on top of it, in this order:

* ``prototypes``: class prototypes from label propagation over the graph,
  scored by cosine and mixed with the attention probabilities;
* ``adaptive``: the cosine is replaced by a per-query mix of cosine and
  inverse Euclidean distance;
* ``refine``: the mixed class distributions of every node are smoothed
  along the graph with support rows held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, softmax

from graphicl.aligners import align_features, align_labels, gen_film
from graphicl.bundle import ModelBundle
from graphicl.dpaa import PromptSet, query_scores
from graphicl.embedder import in_context_embedding
from graphicl.encoder import encode
from graphicl.errors import ConfigError, DimensionError, InputError, StateError
from graphicl.graphcore.graph import Graph

MODES = ("dpaa", "prototypes", "adaptive", "refine")


@dataclass(frozen=True)
class SupportSet:
    """Labeled prompt items; ``classes`` hold graph-local class ids."""

    items: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if items.shape != classes.shape:
            raise InputError("support items and classes differ in length")
        if len(np.unique(items)) != len(items):
            raise InputError("support lists a node more than once")
        if classes.size and classes.min() < 0:
            raise InputError("support class ids must be nonnegative")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "classes", classes)

    @classmethod
    def from_pairs(cls, pairs) -> "SupportSet":
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        items, classes = zip(*pairs)
        return cls(np.array(items), np.array(classes))

    @property
    def class_ids(self) -> np.ndarray:
        return np.unique(self.classes)

    @property
    def positions(self) -> np.ndarray:
        """Index of each support item's class within ``class_ids``."""
        return np.searchsorted(self.class_ids, self.classes)

    @property
    def shots(self) -> int:
        return int(np.bincount(self.positions).min()) if len(self.items) else 0

    def require_classes(self, num_classes: int):
        missing = sorted(set(range(num_classes)) - set(self.classes.tolist()))
        if missing:
            raise InputError(f"support has no items for classes {missing}")


@dataclass(frozen=True)
class InferenceConfig:
    mode: str = "dpaa"
    alpha: float = 0.85
    iterations: int = 10
    refine_blend: float = 0.5
    score_blend: float = 0.5

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown inference mode {self.mode!r}; choose from {', '.join(MODES)}")
        for name in ("alpha", "refine_blend", "score_blend"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")

    def uses(self, mode: str) -> bool:
        return MODES.index(self.mode) >= MODES.index(mode)

    def as_dict(self) -> dict:
        return {"mode": self.mode, "alpha": self.alpha, "iterations": self.iterations,
                "refine_blend": self.refine_blend, "score_blend": self.score_blend}


@dataclass
class Prediction:
    queries: np.ndarray
    predictions: np.ndarray
    scores: np.ndarray
    class_ids: np.ndarray
    embedding: np.ndarray


def _clamp(P, rows, positions):
    P[rows] = 0.0
    P[rows, positions] = 1.0


def _row_normalize(P):
    s = P.sum(axis=1, keepdims=True)
    return np.divide(P, s, out=np.full_like(P, 1.0 / P.shape[1]), where=s > 0)


def graph_aware_prototypes(graph: Graph, support: SupportSet, Z, alpha: float = 0.85,
                           iterations: int = 10) -> np.ndarray:
    """Class prototypes weighted by propagated soft labels.

    Soft labels start one-hot on support rows and uniform elsewhere, then
    follow ``F <- alpha * A F + (1 - alpha) * F0`` with support rows held
    one-hot and every row rescaled to sum to one.
    """
    Z = np.asarray(Z, dtype=np.float64)
    C = len(support.class_ids)
    F0 = np.full((graph.num_nodes, C), 1.0 / C)
    _clamp(F0, support.items, support.positions)
    A = graph.adjacency.to_scipy()
    F = F0.copy()
    for _ in range(iterations):
        F = alpha * (A @ F) + (1.0 - alpha) * F0
        _clamp(F, support.items, support.positions)
        F = _row_normalize(F)
    weights = F / F.sum(axis=0, keepdims=True)
    return weights.T @ Z


def _cosine(z, P):
    zn = np.linalg.norm(z)
    pn = np.linalg.norm(P, axis=1)
    denom = zn * pn
    return np.divide(P @ z, denom, out=np.zeros(len(P)), where=denom > 0)


def adaptive_score(z_q, prototypes) -> np.ndarray:
    """w * cos + (1 - w) / (1 + dist) with w = logistic(variance of z_q)."""
    z = np.asarray(z_q, dtype=np.float64)
    P = np.asarray(prototypes, dtype=np.float64)
    w = expit(np.var(z))
    dist = np.linalg.norm(P - z, axis=1)
    return w * _cosine(z, P) + (1.0 - w) / (1.0 + dist)


def refine_predictions(graph: Graph, scores, support: SupportSet, blend: float = 0.5,
                       iterations: int = 10):
    """Smooth per-node class distributions along the graph.

    ``scores`` has one row per node; rows are turned into distributions by
    softmax. Returns (distributions, argmax predictions as column indices).
    """
    P = softmax(np.asarray(scores, dtype=np.float64), axis=1)
    _clamp(P, support.items, support.positions)
    A = graph.adjacency.to_scipy()
    for _ in range(iterations):
        P = blend * (A @ P) + (1.0 - blend) * P
        _clamp(P, support.items, support.positions)
        P = _row_normalize(P)
    return P, np.argmax(P, axis=1)


def _check_inputs(bundle: ModelBundle, graph: Graph, support: SupportSet, queries):
    if len(support.items) == 0:
        raise InputError("support set is empty")
    if graph.feature_dim != bundle.encoder.theta0.shape[0]:
        raise DimensionError(
            f"graph feature width {graph.feature_dim} differs from the model input width "
            f"{bundle.encoder.theta0.shape[0]}; unify features first")
    top = int(support.classes.max())
    if top >= bundle.l_max:
        raise ConfigError(f"class id {top} needs more than the {bundle.l_max} trained label rows")
    for name, ids in (("support", support.items), ("query", queries)):
        if ids.size and (ids.min() < 0 or ids.max() >= graph.num_nodes):
            raise InputError(f"{name} node id outside [0, {graph.num_nodes})")


def prepare_prompt(bundle: ModelBundle, graph: Graph, support: SupportSet):
    """Domain embedding, aligned node features and the prompt for a support set."""
    num_classes = max(graph.num_classes, int(support.classes.max()) + 1)
    e = in_context_embedding(graph, support.items, support.classes, bundle.encoder.theta0,
                             bundle.embedder, bundle.eta, num_classes=num_classes)
    pf = gen_film(e, bundle.feature_gen)
    pl = gen_film(e, bundle.label_gen)
    Z = align_features(encode(graph, bundle.encoder.theta0), pf)
    prompt = PromptSet(
        support=Z[support.items],
        prototypes=align_labels(support.class_ids, bundle.label_base, pl),
        prototype_ids=support.class_ids,
        support_classes=support.positions,
    )
    return e, Z, prompt


def in_context_predict(bundle: ModelBundle, graph: Graph, support: SupportSet, queries,
                       config: InferenceConfig | None = None) -> Prediction:
    """Predict query classes from the support set alone; the bundle is never modified."""
    config = config or InferenceConfig()
    config.validate()
    queries = np.asarray(queries, dtype=np.int64).reshape(-1)
    _check_inputs(bundle, graph, support, queries)
    before = bundle.content_hash()

    e, Z, prompt = prepare_prompt(bundle, graph, support)
    rows = np.arange(graph.num_nodes) if config.uses("refine") else queries
    raw = np.stack([query_scores(Z[v], prompt, bundle.dpaa) for v in rows]) if len(rows) else \
        np.zeros((0, len(support.class_ids)))

    if config.uses("prototypes"):
        protos = graph_aware_prototypes(graph, support, Z, config.alpha, config.iterations)
        if config.uses("adaptive"):
            metric = np.stack([adaptive_score(Z[v], protos) for v in rows])
        else:
            metric = np.stack([_cosine(Z[v], protos) for v in rows])
        w = config.score_blend
        probs = (1.0 - w) * softmax(raw / bundle.tau, axis=1) + w * softmax(metric / bundle.tau, axis=1)
        scores = np.log(probs)
    else:
        scores = raw

    if config.uses("refine"):
        P, _ = refine_predictions(graph, scores, support, config.refine_blend, config.iterations)
        scores = np.log(np.maximum(P[queries], 1e-300))

    if bundle.content_hash() != before:
        raise StateError("model parameters changed during inference")
    cols = np.argmax(scores, axis=1) if len(scores) else np.zeros(0, dtype=np.int64)
    return Prediction(queries, support.class_ids[cols], scores, support.class_ids, e.vector)


def nearest_mean_predict(bundle: ModelBundle, graph: Graph, support: SupportSet, queries) -> np.ndarray:
    """Baseline: cosine to class means of the aligned support features."""
    queries = np.asarray(queries, dtype=np.int64).reshape(-1)
    _check_inputs(bundle, graph, support, queries)
    _, Z, _ = prepare_prompt(bundle, graph, support)
    pos = support.positions
    means = np.stack([Z[support.items[pos == c]].mean(axis=0) for c in range(len(support.class_ids))])
    cols = np.array([np.argmax(_cosine(Z[v], means)) for v in queries], dtype=np.int64)
    return support.class_ids[cols]

