"""Tensor values, CSR sparse matrices and the reverse-mode gradient tape."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from graphicl.errors import DimensionError, NumericError, StateError


class Tensor:
    """A float64 array plus a flag telling the tape whether to track it.

    Tensors are treated as immutable: ops always return new tensors and
    never write into ``data``.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; imported lazily to avoid a cycle with ops.py
    def __matmul__(self, other):
        from graphicl.numkernel import ops
        return ops.matmul(self, other)

    def __add__(self, other):
        from graphicl.numkernel import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from graphicl.numkernel import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from graphicl.numkernel import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from graphicl.numkernel import ops
        return ops.scale(self, -1.0)

    @property
    def T(self):
        from graphicl.numkernel import ops
        return ops.transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed sparse row matrix (never trainable)."""

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        indptr = np.asarray(self.indptr)
        if indptr.shape != (self.rows + 1,) or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            raise DimensionError("row-pointer must be nondecreasing with length rows+1")
        if len(self.indices) != indptr[-1] or len(self.values) != indptr[-1]:
            raise DimensionError("column-index/value arrays disagree with row-pointer")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.cols):
            raise DimensionError(f"column index out of range [0, {self.cols})")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("sparse values must be finite")

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr.astype(np.int64),
                   m.indices.astype(np.int64), m.data.copy())

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.indices, self.indptr), shape=self.shape)

    def todense(self) -> np.ndarray:
        return self.to_scipy().toarray()


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: Tensor
    backward: BackwardFn


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tapes() -> list["GradTape"]:
    return _stack()


class GradTape:
    """Records ops executed inside its ``with`` block for reverse-mode replay.

    Tapes are thread-local: ops run on another thread never land on this one.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with GradTape() as tape:
    ...     y = ops.mean(x)
    >>> tape.gradient(y, [x])
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False

    def record(self, op: str, inputs: tuple, output: Tensor, backward: BackwardFn):
        self.records.append(_Record(op, inputs, output, backward))

    def gradient(self, target: Tensor, sources: Sequence[Tensor], seed=None) -> list[np.ndarray]:
        if not self.records:
            raise StateError("backward called before any forward op was recorded")
        produced = {id(r.output) for r in self.records}
        if id(target) not in produced:
            raise StateError("target tensor was not produced on this tape")
        if seed is None:
            seed = np.ones_like(target.data)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != target.shape:
            raise DimensionError(f"backward: seed shape {seed.shape} != output shape {target.shape}")

        grads: dict[int, np.ndarray] = {id(target): seed}
        for rec in reversed(self.records):
            g = grads.get(id(rec.output))
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def backward(tape: GradTape, target: Tensor, sources: Sequence[Tensor], seed=None) -> list[np.ndarray]:
    """Functional alias for :meth:`GradTape.gradient`."""
    return tape.gradient(target, sources, seed)
