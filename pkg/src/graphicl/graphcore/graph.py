"""Graph containers, adjacency normalization and the prototype graph distance."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from graphicl.errors import DimensionError, NumericError, ValidationError
from graphicl.numkernel import SparseMatrix

UNLABELED = -1


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with pre-encoded node features and indexed labels.

    ``labels`` holds -1 for unlabeled nodes. Arrays are read-only.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = field(default="", compare=False)

    def __post_init__(self):
        n = int(self.num_nodes)
        edges = _frozen(np.reshape(self.edges, (-1, 2)), np.int64)
        features = _frozen(self.features, np.float64)
        labels = _frozen(self.labels, np.int64)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if features.ndim != 2 or features.shape[0] != n:
            raise DimensionError(f"feature matrix {features.shape} does not have {n} rows")
        if labels.shape != (n,):
            raise DimensionError(f"label vector {labels.shape} does not have {n} entries")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValidationError(f"edge endpoint outside [0, {n})")
        if self.num_classes < 0:
            raise ValidationError("class count must be nonnegative")
        bad = np.flatnonzero((labels != UNLABELED) & ((labels < 0) | (labels >= self.num_classes)))
        if bad.size:
            v = int(bad[0])
            raise ValidationError(f"node {v} has label {labels[v]} outside [0, {self.num_classes})")
        if not np.all(np.isfinite(features)):
            raise NumericError("graph features must be finite")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    def nodes_of_class(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    @cached_property
    def adjacency(self) -> SparseMatrix:
        return normalize_adjacency(self)

    def with_features(self, features) -> "Graph":
        return Graph(self.num_nodes, self.edges, features, self.labels, self.num_classes, self.name)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and np.array_equal(self.edges, other.edges)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Triples (head, relation, tail) over featured entities."""

    num_entities: int
    triples: np.ndarray
    features: np.ndarray
    num_relations: int
    name: str = field(default="", compare=False)

    def __post_init__(self):
        triples = _frozen(np.reshape(self.triples, (-1, 3)), np.int64)
        features = _frozen(self.features, np.float64)
        object.__setattr__(self, "triples", triples)
        object.__setattr__(self, "features", features)
        n = int(self.num_entities)
        if features.ndim != 2 or features.shape[0] != n:
            raise DimensionError(f"entity features {features.shape} do not have {n} rows")
        if triples.size:
            h, r, t = triples.T
            if min(h.min(), t.min()) < 0 or max(h.max(), t.max()) >= n:
                raise ValidationError(f"triple entity outside [0, {n})")
            if r.min() < 0 or r.max() >= self.num_relations:
                bad = int(np.flatnonzero((r < 0) | (r >= self.num_relations))[0])
                raise ValidationError(f"triple {bad} has relation {r[bad]} outside [0, {self.num_relations})")

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.num_entities == other.num_entities
            and self.num_relations == other.num_relations
            and np.array_equal(self.triples, other.triples)
            and self.features.tobytes() == other.features.tobytes()
            and self.features.shape == other.features.shape
        )

    __hash__ = None


def _adjacency_with_self_loops(n: int, edges: np.ndarray) -> sp.csr_matrix:
    edges = edges[edges[:, 0] != edges[:, 1]]
    rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    a.data[:] = 1.0  # duplicate edges collapse to one
    return a


def normalize_adjacency(graph: Graph) -> SparseMatrix:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 with self-loops."""
    a = _adjacency_with_self_loops(graph.num_nodes, graph.edges)
    a.sort_indices()
    deg = np.asarray(a.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(a.shape[0]), np.diff(a.indptr))
    # one rounding per entry: 1/sqrt(d_i d_j) rather than (1/sqrt d_i)(1/sqrt d_j)
    a.data = 1.0 / np.sqrt(deg[rows] * deg[a.indices])
    return SparseMatrix.from_scipy(a)


def graph_distance(g1: Graph, g2: Graph) -> float:
    """||X1 - X2||_F + ||A1 - A2||_F after padding the smaller graph.

    Padding nodes are isolated: zero feature rows and a 1.0 diagonal entry
    in the normalized adjacency.
    """
    if g1.feature_dim != g2.feature_dim:
        raise DimensionError(f"graph_distance: feature widths {g1.feature_dim} and {g2.feature_dim} differ")
    n = max(g1.num_nodes, g2.num_nodes)

    def padded(g):
        x = np.zeros((n, g.feature_dim))
        x[: g.num_nodes] = g.features
        a = g.adjacency.to_scipy()
        extra = n - g.num_nodes
        if extra:
            a = sp.block_diag([a, sp.identity(extra)], format="csr")
        return x, a

    x1, a1 = padded(g1)
    x2, a2 = padded(g2)
    return float(np.linalg.norm(x1 - x2) + sparse_norm(a1 - a2))
