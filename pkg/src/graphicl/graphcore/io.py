"""Versioned graph container files.

Graph layout::

    GIA1 nodes=<n> classes=<C> dim=<d>
    EDGES <m>
    <u> <v>                      (m lines)
    FEATURES <n*d>
    <n*d little-endian float64, row-major>
    LABELS <n>
    <label>                      (n lines, -1 = unlabeled)

Knowledge graphs use the ``GIAKG1 entities=<n> relations=<R> dim=<d>``
header, a ``TRIPLES <t>`` section of ``h r t`` lines and the same
``FEATURES`` section.
"""

from __future__ import annotations

import os

import numpy as np

from graphicl.errors import ParseError, ValidationError
from graphicl.graphcore.graph import Graph, KnowledgeGraph

GRAPH_MAGIC = "GIA1"
KG_MAGIC = "GIAKG1"
_F64 = np.dtype("<f8")


def _float_section(tag: str, a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype=_F64)
    return f"{tag} {a.size}\n".encode() + a.tobytes() + b"\n"


def write_graph(graph: Graph, path) -> None:
    n, d = graph.features.shape
    parts = [f"{GRAPH_MAGIC} nodes={n} classes={graph.num_classes} dim={d}\n".encode()]
    parts.append(f"EDGES {len(graph.edges)}\n".encode())
    parts.append("".join(f"{u} {v}\n" for u, v in graph.edges).encode())
    parts.append(_float_section("FEATURES", graph.features))
    parts.append(f"LABELS {n}\n".encode())
    parts.append("".join(f"{l}\n" for l in graph.labels).encode())
    _atomic_write(path, b"".join(parts))


def write_knowledge_graph(kg: KnowledgeGraph, path) -> None:
    n, d = kg.features.shape
    parts = [f"{KG_MAGIC} entities={n} relations={kg.num_relations} dim={d}\n".encode()]
    parts.append(f"TRIPLES {len(kg.triples)}\n".encode())
    parts.append("".join(f"{h} {r} {t}\n" for h, r, t in kg.triples).encode())
    parts.append(_float_section("FEATURES", kg.features))
    _atomic_write(path, b"".join(parts))


def _atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def line(self, what: str) -> str:
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            raise ParseError(f"unexpected end of file while reading {what}", self.pos)
        start = self.pos
        self.pos = end + 1
        try:
            return self.data[start:end].decode("ascii")
        except UnicodeDecodeError:
            raise ParseError(f"non-text bytes in {what}", start) from None

    def section(self, tag: str) -> int:
        start = self.pos
        parts = self.line(f"{tag} header").split()
        if len(parts) != 2 or parts[0] != tag or not parts[1].isdigit():
            raise ParseError(f"expected '{tag} <count>'", start)
        return int(parts[1])

    def ints(self, count: int, width: int, what: str) -> np.ndarray:
        out = np.empty((count, width), dtype=np.int64)
        for i in range(count):
            start = self.pos
            fields = self.line(what).split()
            if len(fields) != width:
                raise ParseError(f"{what} line {i} has {len(fields)} fields, expected {width}", start)
            try:
                out[i] = [int(f) for f in fields]
            except ValueError:
                raise ParseError(f"{what} line {i} is not integer", start) from None
        return out

    def floats(self, count: int) -> np.ndarray:
        nbytes = count * _F64.itemsize
        if self.pos + nbytes + 1 > len(self.data):
            raise ParseError(f"binary section truncated: need {nbytes} bytes", self.pos)
        a = np.frombuffer(self.data, dtype=_F64, count=count, offset=self.pos).astype(np.float64)
        self.pos += nbytes
        if self.data[self.pos:self.pos + 1] != b"\n":
            raise ParseError("missing newline after binary section", self.pos)
        self.pos += 1
        return a


def _header(cur: _Cursor, magic: str, keys: tuple) -> dict:
    fields = cur.line("header").split()
    if not fields or fields[0] != magic:
        raise ParseError(f"bad magic, expected {magic}", 0)
    values = {}
    for f in fields[1:]:
        k, _, v = f.partition("=")
        if not v.isdigit():
            raise ParseError(f"malformed header field {f!r}", 0)
        values[k] = int(v)
    if set(values) != set(keys):
        raise ParseError(f"header must define {', '.join(keys)}", 0)
    return values


def _parse_graph(data: bytes) -> Graph:
    cur = _Cursor(data)
    h = _header(cur, GRAPH_MAGIC, ("nodes", "classes", "dim"))
    n, d = h["nodes"], h["dim"]
    edges = cur.ints(cur.section("EDGES"), 2, "EDGES")
    start = cur.pos
    count = cur.section("FEATURES")
    if count != n * d:
        raise ParseError(f"FEATURES count {count} != nodes*dim = {n * d}", start)
    x = cur.floats(count).reshape(n, d)
    start = cur.pos
    if cur.section("LABELS") != n:
        raise ParseError(f"LABELS count must equal nodes={n}", start)
    labels = cur.ints(n, 1, "LABELS").ravel()
    if cur.pos != len(data):
        raise ParseError("trailing bytes after LABELS", cur.pos)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ValidationError(f"edge endpoint outside [0, {n})")
    return Graph(n, edges, x, labels, h["classes"])


def read_graph(path) -> Graph:
    with open(path, "rb") as fh:
        data = fh.read()
    g = _parse_graph(data)
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return Graph(g.num_nodes, g.edges, g.features, g.labels, g.num_classes, name=name)


def read_knowledge_graph(path) -> KnowledgeGraph:
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    h = _header(cur, KG_MAGIC, ("entities", "relations", "dim"))
    n, d = h["entities"], h["dim"]
    triples = cur.ints(cur.section("TRIPLES"), 3, "TRIPLES")
    start = cur.pos
    count = cur.section("FEATURES")
    if count != n * d:
        raise ParseError(f"FEATURES count {count} != entities*dim = {n * d}", start)
    x = cur.floats(count).reshape(n, d)
    if cur.pos != len(data):
        raise ParseError("trailing bytes after FEATURES", cur.pos)
    return KnowledgeGraph(n, triples, x, h["relations"],
                          name=os.path.splitext(os.path.basename(str(path)))[0])


def write_matrix(path, matrix, tag: str = "SCORES") -> None:
    """Dump a float matrix as ``<tag> <rows> <cols>`` plus raw float64 bytes."""
    m = np.ascontiguousarray(matrix, dtype=_F64)
    rows, cols = m.shape
    _atomic_write(path, f"{tag} {rows} {cols}\n".encode() + m.tobytes() + b"\n")


def read_matrix(path, tag: str = "SCORES") -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    parts = cur.line("matrix header").split()
    if len(parts) != 3 or parts[0] != tag or not (parts[1].isdigit() and parts[2].isdigit()):
        raise ParseError(f"expected '{tag} <rows> <cols>'", 0)
    rows, cols = int(parts[1]), int(parts[2])
    return cur.floats(rows * cols).reshape(rows, cols)
