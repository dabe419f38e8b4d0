"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from graphicl.numkernel.tensor import GradTape, Tensor


def numeric_grad(fn, arrays, h=1e-5):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. each array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            fp = float(fn(*arrays))
            a[idx] = orig - h
            fm = float(fn(*arrays))
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def relative_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(build, arrays, h=1e-5, seed=None) -> float:
    """Worst relative error between tape and finite-difference gradients.

    ``build(*tensors)`` must return a Tensor; a non-scalar output is reduced
    with a fixed random projection ``seed`` so every output entry matters.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with GradTape() as tape:
        out = build(*tensors)
    if seed is None:
        seed = np.random.default_rng(0).normal(size=out.shape)
    seed = np.asarray(seed, dtype=np.float64).reshape(out.shape)
    analytic = tape.gradient(out, tensors, seed)

    def scalar(*arrs):
        return float((build(*[Tensor(a) for a in arrs]).data * seed).sum())

    numeric = numeric_grad(scalar, arrays, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
