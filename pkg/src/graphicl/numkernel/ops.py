"""Differentiable ops over :class:`Tensor`.

Every op validates shapes, rejects non-finite input, computes its result
with numpy and, when a tape is active and some input is tracked, records a
closure that maps the output gradient to input gradients.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp

from graphicl.errors import DimensionError, NumericError
from graphicl.numkernel.tensor import SparseMatrix, Tensor, active_tapes, as_tensor


def _check_finite(op, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{op}: non-finite input")


def _emit(op, inputs, out, backward):
    tracked = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=tracked)
    if tracked:
        for tape in active_tapes():
            tape.record(op, tuple(inputs), result, backward)
    return result


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    _check_finite("matmul", a.data, b.data)
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _emit("matmul", (a, b), A @ B, backward)


def spmm(m: SparseMatrix, x):
    """Sparse-dense product ``m @ x``; the sparse operand is a constant."""
    x = as_tensor(x)
    if x.ndim != 2 or m.cols != x.shape[0]:
        raise DimensionError(f"spmm: incompatible shapes {m.shape} and {x.shape}")
    _check_finite("spmm", x.data)
    S = m.to_scipy()

    def backward(g):
        return (np.asarray(S.T @ g),)

    return _emit("spmm", (x,), np.asarray(S @ x.data), backward)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    _check_finite("add", a.data, b.data)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit("add", (a, b), a.data + b.data, backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    _check_finite("sub", a.data, b.data)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _emit("sub", (a, b), a.data - b.data, backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    _check_finite("mul", a.data, b.data)
    A, B = a.data, b.data

    def backward(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _emit("mul", (a, b), A * B, backward)


def _row_vector(op, x, v):
    if x.ndim != 2 or v.data.reshape(-1).shape[0] != x.shape[1] or v.ndim > 2 or (
        v.ndim == 2 and v.shape[0] != 1
    ):
        raise DimensionError(f"{op}: row vector {v.shape} does not match matrix {x.shape}")


def row_add(x, v):
    """Add the vector ``v`` (length d) to every row of ``x`` (n x d)."""
    x, v = as_tensor(x), as_tensor(v)
    _row_vector("row_add", x, v)
    return add(x, v)


def row_mul(x, v):
    """Multiply every row of ``x`` elementwise by ``v``."""
    x, v = as_tensor(x), as_tensor(v)
    _row_vector("row_mul", x, v)
    return mul(x, v)


def scale(a, c: float):
    a = as_tensor(a)
    _check_finite("scale", a.data)

    def backward(g):
        return (g * c,)

    return _emit("scale", (a,), a.data * c, backward)


def relu(a):
    a = as_tensor(a)
    _check_finite("relu", a.data)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _emit("relu", (a,), np.where(mask, a.data, 0.0), backward)


def softplus(a):
    a = as_tensor(a)
    _check_finite("softplus", a.data)
    X = a.data

    def backward(g):
        return (g * expit(X),)

    return _emit("softplus", (a,), np.logaddexp(0.0, X), backward)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a):
    """Softmax over the last axis."""
    a = as_tensor(a)
    _check_finite("softmax", a.data)
    P = _softmax(a.data)

    def backward(g):
        return (P * (g - (g * P).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (a,), P, backward)


def conv2d(x, w, b=None, stride: int = 1):
    """Valid-padding 2-D cross-correlation.

    x: (N, C, H, W); w: (O, C, kh, kw); b: (O,) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    if H < kh or W < kw or stride < 1:
        raise DimensionError(f"conv2d: kernel {w.shape} / stride {stride} too large for input {x.shape}")
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (O,):
            raise DimensionError(f"conv2d: bias {b.shape} does not match {O} output channels")
        inputs = (x, w, b)
    _check_finite("conv2d", *(t.data for t in inputs))

    Ho, Wo = (H - kh) // stride + 1, (W - kw) // stride + 1
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    wf = w.data.reshape(O, -1)
    out = (cols @ wf.T).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gf = g.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, O)
        gw = (gf.T @ cols).reshape(w.shape)
        gcols = (gf @ wf).reshape(N, Ho, Wo, C, kh, kw)
        gx = np.zeros(x.shape)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _emit("conv2d", inputs, np.ascontiguousarray(out), backward)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    src = a.shape

    def backward(g):
        return (g.reshape(src),)

    return _emit("reshape", (a,), out, backward)


def flatten(a, start_axis: int = 1):
    """Collapse all axes from ``start_axis`` on into one."""
    a = as_tensor(a)
    return reshape(a, a.shape[:start_axis] + (-1,))


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got {a.shape}")

    def backward(g):
        return (g.T,)

    return _emit("transpose", (a,), a.data.T.copy(), backward)


def sum(a):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    _check_finite("sum", a.data)
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", (a,), np.asarray(a.data.sum()), backward)


def mean(a):
    a = as_tensor(a)
    _check_finite("mean", a.data)
    shape, n = a.shape, a.data.size

    def backward(g):
        return (np.full(shape, float(g) / n),)

    return _emit("mean", (a,), np.asarray(a.data.mean()), backward)


def cross_entropy(logits, targets):
    """Mean over rows of -log softmax(logits)[row, target]."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise DimensionError(f"cross_entropy: target outside [0, {logits.shape[1]})")
    _check_finite("cross_entropy", logits.data)
    n = logits.shape[0]
    rows = np.arange(n)
    logp = logits.data - logsumexp(logits.data, axis=1, keepdims=True)
    loss = -logp[rows, targets].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (float(g) / n),)

    return _emit("cross_entropy", (logits,), np.asarray(loss), backward)


def attention(q, k, v, scale: float):
    """Single-query scaled dot-product attention, one independent query per row.

    out[i] = softmax(q[i] k^T * scale) v
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2 or q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention: query {q.shape}, keys {k.shape}, values {v.shape}")
    if k.shape[0] == 0:
        raise DimensionError("attention: empty key set")
    _check_finite("attention", q.data, k.data, v.data)
    Q, K, V = q.data, k.data, v.data
    P = _softmax((Q @ K.T) * scale)

    def backward(g):
        gv = P.T @ g
        gp = g @ V.T
        gs = P * (gp - (gp * P).sum(axis=1, keepdims=True)) * scale
        return gs @ K, gs.T @ Q, gv

    return _emit("attention", (q, k, v), P @ V, backward)


def attention_weights(q, k, scale: float) -> np.ndarray:
    """Untracked attention weight matrix, for inspection and tests."""
    q, k = as_tensor(q), as_tensor(k)
    return _softmax((q.data @ k.data.T) * scale)


def take_rows(a, index):
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.ndim < 1 or (index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0])):
        raise DimensionError(f"take_rows: index out of range for shape {a.shape}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _emit("take_rows", (a,), a.data[index], backward)


def slice_cols(a, start: int, stop: int):
    a = as_tensor(a)
    if a.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise DimensionError(f"slice_cols: [{start}:{stop}] invalid for shape {a.shape}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _emit("slice_cols", (a,), a.data[:, start:stop].copy(), backward)


def concat(tensors, axis: int = 1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return _emit("concat", tuple(tensors), out, backward)


OP_KINDS = {
    "matmul": matmul,
    "spmm": spmm,
    "add": add,
    "sub": sub,
    "mul": mul,
    "row_add": row_add,
    "row_mul": row_mul,
    "scale": scale,
    "relu": relu,
    "softplus": softplus,
    "softmax": softmax,
    "conv2d": conv2d,
    "flatten": flatten,
    "reshape": reshape,
    "transpose": transpose,
    "sum": sum,
    "mean": mean,
    "cross_entropy": cross_entropy,
    "attention": attention,
    "take_rows": take_rows,
    "slice_cols": slice_cols,
    "concat": concat,
}


def forward(kind: str, *inputs, **attrs) -> Tensor:
    """Dispatch an op by name, e.g. ``forward("conv2d", x, w, b, stride=2)``."""
    try:
        fn = OP_KINDS[kind]
    except KeyError:
        raise DimensionError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)
