"""Feature-width unification and knowledge-graph to line-graph conversion."""

from __future__ import annotations

from collections import defaultdict
from itertools import combinations

import numpy as np

from graphicl.errors import ConfigError, NumericError
from graphicl.graphcore.graph import Graph, KnowledgeGraph

DEFAULT_WIDTH = 64


SIGN_RULES = ("right", "data")


def unify_features(features, d_o: int = DEFAULT_WIDTH, center: bool = False, sign: str = "right") -> np.ndarray:
    """Project ``features`` (n x d_i) onto its top singular directions.

    Returns U_k * S_k for k = min(d_o, rank), zero-padded to d_o columns.

    ``sign`` picks the orientation of each column:

    * ``"right"``: the largest-magnitude entry of each right singular
      vector is positive.
    * ``"data"``: each output column has positive third moment (largest
      magnitude entry positive when the column is symmetric). This depends
      only on the rows' geometry, so ``unify_features(X @ Q)`` equals
      ``unify_features(X)`` for any orthogonal Q, and graphs whose features
      live in different bases land in comparable coordinates.
    """
    if sign not in SIGN_RULES:
        raise ConfigError(f"unknown sign rule {sign!r}; choose from {', '.join(SIGN_RULES)}")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ConfigError(f"unify_features needs a nonempty matrix, got shape {x.shape}")
    if d_o < 1:
        raise ConfigError("d_o must be positive")
    if not np.all(np.isfinite(x)):
        raise NumericError("unify_features: non-finite features")
    if center:
        x = x - x.mean(axis=0, keepdims=True)

    out = np.zeros((x.shape[0], d_o))
    if not np.any(x):
        return out
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    tol = s[0] * max(x.shape) * np.finfo(np.float64).eps
    k = min(d_o, int(np.sum(s > tol)))
    u, s, vt = u[:, :k], s[:k], vt[:k]
    if sign == "right":
        pivot = np.argmax(np.abs(vt), axis=1)
        signs = np.sign(vt[np.arange(k), pivot])
    else:
        signs = _column_signs(u)
    out[:, :k] = u * (s * signs)
    return out


def _column_signs(u: np.ndarray) -> np.ndarray:
    skew = (u ** 3).sum(axis=0)
    pivot = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    # skew below this is indistinguishable from rounding noise
    flat = np.abs(skew) <= 1e-8 * (np.abs(u) ** 3).sum(axis=0)
    signs = np.where(flat, np.sign(pivot), np.sign(skew))
    return np.where(signs == 0, 1.0, signs)


def line_graph_transform(kg: KnowledgeGraph, d_o: int = DEFAULT_WIDTH) -> Graph:
    """Turn relation classification on ``kg`` into node classification.

    Each triple becomes a node labeled with its relation id; two nodes are
    adjacent when their triples share a head or tail entity. Node features
    are [x_head || x_tail], PCA-projected (centered SVD) to ``d_o``.
    """
    triples = kg.triples
    incident = defaultdict(list)
    for i, (h, _, t) in enumerate(triples):
        incident[int(h)].append(i)
        if t != h:
            incident[int(t)].append(i)
    pairs = set()
    for members in incident.values():
        pairs.update(combinations(members, 2))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)

    x = np.concatenate([kg.features[triples[:, 0]], kg.features[triples[:, 2]]], axis=1)
    return Graph(
        num_nodes=len(triples),
        edges=edges,
        features=unify_features(x, d_o, center=True),
        labels=triples[:, 1],
        num_classes=kg.num_relations,
        name=f"line({kg.name})" if kg.name else "line-graph",
    )


def unify_graph(graph: Graph, d_o: int = DEFAULT_WIDTH, sign: str = "right") -> Graph:
    return graph.with_features(unify_features(graph.features, d_o, sign=sign))
