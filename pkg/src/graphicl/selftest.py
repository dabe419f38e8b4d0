"""Built-in gradient-check and oracle suites, runnable without pytest."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from graphicl.encoder import fingerprint, fingerprint_closed_form
from graphicl.graphcore.graph import Graph
from graphicl.numkernel import SparseMatrix, check_gradients, ops

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail or self.value}"


def _away_from_zero(rng, shape, margin=0.05):
    # relu has a kink at 0; central differences straddling it are meaningless
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _sparse(rng, rows, cols, density=0.4):
    m = sp.random(rows, cols, density=density, random_state=rng, format="csr")
    return SparseMatrix.from_scipy(m)


def gradient_cases(rng):
    """One random instance per op kind: name -> (build, arrays)."""
    n, d, h = rng.integers(2, 5), rng.integers(2, 5), rng.integers(2, 5)
    A = _sparse(rng, int(n), int(d))
    targets = rng.integers(0, int(h), size=int(n))
    rows = rng.integers(0, int(n), size=int(n) + 2)
    c0 = int(rng.integers(0, int(d)))
    c1 = int(rng.integers(c0 + 1, int(d) + 1))
    scale = float(rng.uniform(0.2, 1.5))
    stride = int(rng.integers(1, 3))
    return {
        "matmul": (ops.matmul, [rng.normal(size=(n, d)), rng.normal(size=(d, h))]),
        "spmm": (lambda x: ops.spmm(A, x), [rng.normal(size=(d, h))]),
        "add": (ops.add, [rng.normal(size=(n, d)), rng.normal(size=(n, d))]),
        "sub": (ops.sub, [rng.normal(size=(n, d)), rng.normal(size=(1, d))]),
        "mul": (ops.mul, [rng.normal(size=(n, d)), rng.normal(size=(n, d))]),
        "row_add": (ops.row_add, [rng.normal(size=(n, d)), rng.normal(size=d)]),
        "row_mul": (ops.row_mul, [rng.normal(size=(n, d)), rng.normal(size=(1, d))]),
        "scale": (lambda a: ops.scale(a, scale), [rng.normal(size=(n, d))]),
        "relu": (ops.relu, [_away_from_zero(rng, (n, d))]),
        "softplus": (ops.softplus, [rng.normal(scale=3.0, size=(n, d))]),
        "softmax": (ops.softmax, [rng.normal(size=(n, d))]),
        "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, stride=stride),
                   [rng.normal(size=(2, 2, 7, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]),
        "reshape": (lambda a: ops.reshape(a, (-1,)), [rng.normal(size=(n, d))]),
        "flatten": (ops.flatten, [rng.normal(size=(2, n, d))]),
        "transpose": (ops.transpose, [rng.normal(size=(n, d))]),
        "sum": (ops.sum, [rng.normal(size=(n, d))]),
        "mean": (ops.mean, [rng.normal(size=(n, d))]),
        "cross_entropy": (lambda z: ops.cross_entropy(z, targets), [rng.normal(size=(n, h))]),
        "attention": (lambda q, k, v: ops.attention(q, k, v, 1.0 / np.sqrt(d)),
                      [rng.normal(size=(n, d)), rng.normal(size=(h, d)), rng.normal(size=(h, d))]),
        "take_rows": (lambda a: ops.take_rows(a, rows), [rng.normal(size=(n, d))]),
        "slice_cols": (lambda a: ops.slice_cols(a, c0, c1), [rng.normal(size=(n, d))]),
        "concat": (lambda a, b: ops.concat([a, b], axis=1), [rng.normal(size=(n, d)), rng.normal(size=(n, h))]),
    }


def gradient_suite(instances: int = 20, seed: int = 0) -> dict:
    """Worst tape-vs-finite-difference relative error per op over random instances."""
    rng = np.random.default_rng(seed)
    worst = {}
    for _ in range(instances):
        for name, (build, arrays) in gradient_cases(rng).items():
            err = check_gradients(build, arrays, seed=None)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def random_graph(rng, n: int, d: int, classes: int, p: float = 0.3, labeled: float = 1.0) -> Graph:
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    labels = rng.integers(0, classes, size=n)
    labels[rng.random(n) >= labeled] = -1
    labels[:classes] = np.arange(classes)
    return Graph(n, np.stack([iu[keep], ju[keep]], axis=1), rng.normal(size=(n, d)), labels, classes)


def closed_form_suite(graphs: int = 10, seed: int = 0) -> float:
    """Largest entry gap between the tape fingerprint and the closed form."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(graphs):
        n, d, C = int(rng.integers(5, 15)), int(rng.integers(3, 9)), int(rng.integers(2, 4))
        g = random_graph(rng, n, d, C)
        theta = rng.normal(scale=d ** -0.5, size=(d, max(C, int(rng.integers(C, 8)))))
        a = fingerprint(g, theta0=theta, eta=0.01)
        b = fingerprint_closed_form(g, theta0=theta, eta=0.01)
        worst = max(worst, float(np.abs(a.delta - b.delta).max()))
    return worst


def naive_spmm(m: SparseMatrix, x: np.ndarray) -> np.ndarray:
    out = np.zeros((m.rows, x.shape[1]))
    for r in range(m.rows):
        for idx in range(m.indptr[r], m.indptr[r + 1]):
            out[r] += m.values[idx] * x[m.indices[idx]]
    return out


def run_selftest(instances: int = 20, seed: int = 0) -> list:
    results = []
    t0 = time.perf_counter()
    worst = gradient_suite(instances, seed)
    for name, err in sorted(worst.items()):
        results.append(CheckResult(f"gradient {name}", err <= GRAD_TOL, err, f"max rel. error {err:.2e}"))
    elapsed = time.perf_counter() - t0
    results.append(CheckResult("gradient suite runtime", elapsed < 60.0, elapsed, f"{elapsed:.1f}s (limit 60s)"))
    gap = closed_form_suite(10, seed)
    results.append(CheckResult("fingerprint closed form", gap <= 1e-10, gap, f"max abs gap {gap:.2e}"))

    rng = np.random.default_rng(seed)
    m = _sparse(rng, 12, 9)
    x = rng.normal(size=(9, 4))
    same = bool(np.array_equal(ops.spmm(m, x).data, naive_spmm(m, x)))
    results.append(CheckResult("sparse product vs naive loop", same, float(same), "bitwise" if same else "mismatch"))

    q, k, v = rng.normal(size=(1, 6)), rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    s = (q @ k.T)[0] / np.sqrt(6)
    w = np.exp(s - s.max())
    w /= w.sum()
    ref = sum(w[j] * v[j] for j in range(5))
    gap = float(np.abs(ops.attention(q, k, v, 1.0 / np.sqrt(6)).data[0] - ref).max())
    results.append(CheckResult("attention vs naive loop", gap <= 1e-12, gap, f"max abs gap {gap:.2e}"))
    return results
