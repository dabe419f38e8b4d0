"""One-layer graph encoder at a frozen initialization, and gradient fingerprints.

A fingerprint is the displacement of the encoder weights after one gradient
step of a cross-entropy loss whose logits are the first ``C`` coordinates of
the pre-activation encoding ``(A X theta0)_v``. It summarizes how a graph's
features, structure and labels pull on the shared initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from graphicl.errors import ConfigError, DimensionError, InputError
from graphicl.graphcore.graph import Graph
from graphicl.numkernel import GradTape, SparseMatrix, Tensor, ops

DEFAULT_ETA = 0.01


@dataclass(frozen=True)
class EncoderInit:
    theta0: np.ndarray
    seed: int

    @classmethod
    def create(cls, d_o: int = 64, d: int = 64, seed: int = 0) -> "EncoderInit":
        rng = np.random.default_rng([seed, 10])
        theta = rng.normal(scale=1.0 / np.sqrt(d_o), size=(d_o, d))
        theta.setflags(write=False)
        return cls(theta, seed)

    @property
    def shape(self):
        return self.theta0.shape


@dataclass(frozen=True)
class Fingerprint:
    delta: np.ndarray
    eta: float
    count: int


def _check_theta(graph: Graph, theta: np.ndarray):
    if theta.ndim != 2 or theta.shape[0] != graph.feature_dim:
        raise DimensionError(f"encoder weights {theta.shape} do not match feature width {graph.feature_dim}")


def _rows(adj: SparseMatrix, items: np.ndarray) -> SparseMatrix:
    return SparseMatrix.from_scipy(adj.to_scipy()[items])


def encode(graph: Graph, theta, items=None) -> np.ndarray:
    """relu(A X theta) for the requested item rows (all nodes by default)."""
    theta = np.asarray(theta, dtype=np.float64)
    _check_theta(graph, theta)
    adj = graph.adjacency if items is None else _rows(graph.adjacency, np.asarray(items, dtype=np.int64))
    ax = ops.spmm(adj, graph.features)
    return ops.relu(ops.matmul(ax, theta)).data


def _canonical(graph, items, labels, num_classes):
    if items is None:
        items = graph.labeled_nodes
        labels = graph.labels[items]
    items = np.asarray(items, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if items.size == 0:
        raise InputError("fingerprint needs at least one labeled item")
    if labels.shape != items.shape:
        raise InputError("items and labels differ in length")
    C = graph.num_classes if num_classes is None else num_classes
    if labels.min() < 0 or labels.max() >= C:
        raise InputError(f"label outside [0, {C})")
    order = np.argsort(items, kind="stable")
    return items[order], labels[order], C


def fingerprint(graph: Graph, items=None, labels=None, theta0=None, eta: float = DEFAULT_ETA,
                num_classes: int | None = None) -> Fingerprint:
    """One-step displacement ``-eta * grad`` of the mean labeled-item loss at theta0.

    ``items`` defaults to every labeled node. Items are processed in node-id
    order so the result does not depend on how the support was listed.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    _check_theta(graph, theta0)
    items, labels, C = _canonical(graph, items, labels, num_classes)
    if C > theta0.shape[1]:
        raise ConfigError(f"{C} classes exceed encoder width {theta0.shape[1]}")

    ax = ops.spmm(_rows(graph.adjacency, items), graph.features)
    theta = Tensor(theta0, requires_grad=True)
    with GradTape() as tape:
        logits = ops.slice_cols(ops.matmul(ax, theta), 0, C)
        loss = ops.cross_entropy(logits, labels)
    (grad,) = tape.gradient(loss, [theta])
    return Fingerprint(-eta * grad, eta, len(items))


def fingerprint_closed_form(graph: Graph, items=None, labels=None, theta0=None, eta: float = DEFAULT_ETA,
                            num_classes: int | None = None) -> Fingerprint:
    """Closed-form fingerprint ``-eta/|V| X^T A G`` for the linear logit head.

    G holds each item's logit gradient ``softmax(logits) - onehot`` in its
    first C columns and zeros elsewhere.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    _check_theta(graph, theta0)
    items, labels, C = _canonical(graph, items, labels, num_classes)
    if C > theta0.shape[1]:
        raise ConfigError(f"{C} classes exceed encoder width {theta0.shape[1]}")

    a_rows = graph.adjacency.todense()[items]
    x = graph.features
    logits = (a_rows @ x @ theta0)[:, :C]
    g = np.zeros((len(items), theta0.shape[1]))
    g[:, :C] = softmax(logits, axis=1)
    g[np.arange(len(items)), labels] -= 1.0
    grad = x.T @ a_rows.T @ g / len(items)
    return Fingerprint(-eta * grad, eta, len(items))
