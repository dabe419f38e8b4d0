"""Domain-conditioned FiLM transforms for features and label ids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graphicl.errors import ConfigError
from graphicl.numkernel import Tensor, ops



@dataclass
class FiLMGenerator:
    """Two-layer MLP d_e -> hidden -> 2d; first half is the scale, second the shift."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, d_e: int, d: int, hidden: int | None = None, seed: int = 0,
             stream: int = 0, gamma0: float = 1.0) -> "FiLMGenerator":
        """Random weights with the scale bias set so a fresh generator gives gamma near ``gamma0``."""
        if gamma0 <= 0:
            raise ConfigError("gamma0 must be positive")
        hidden = hidden or d_e
        rng = np.random.default_rng([seed, 30, stream])
        b2 = np.zeros(2 * d)
        b2[:d] = np.log(np.expm1(gamma0))
        return cls(
            w1=rng.normal(scale=np.sqrt(2.0 / d_e), size=(d_e, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(scale=0.1 / np.sqrt(hidden), size=(hidden, 2 * d)),
            b2=b2,
        )

    @property
    def width(self) -> int:
        return self.w2.shape[1] // 2

    def arrays(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @classmethod
    def from_arrays(cls, a: dict) -> "FiLMGenerator":
        return cls(a["w1"], a["b1"], a["w2"], a["b2"])


@dataclass(frozen=True)
class FiLMParams:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class LabelBase:
    table: np.ndarray

    @classmethod
    def init(cls, l_max: int, d: int, seed: int = 0) -> "LabelBase":
        rng = np.random.default_rng([seed, 40])
        return cls(rng.normal(size=(l_max, d)))

    @property
    def l_max(self) -> int:
        return self.table.shape[0]


def film_forward(w1, b1, w2, b2, e):
    """Tracked generator pass; ``e`` is a (1, d_e) or (d_e,) embedding. Returns (gamma, beta) rows."""
    e = ops.reshape(e, (1, -1))
    hidden = ops.relu(ops.row_add(ops.matmul(e, w1), b1))
    raw = ops.row_add(ops.matmul(hidden, w2), b2)
    d = raw.shape[1] // 2
    return ops.softplus(ops.slice_cols(raw, 0, d)), ops.slice_cols(raw, d, 2 * d)


def gen_film(e, gen: FiLMGenerator) -> FiLMParams:
    vec = e.vector if hasattr(e, "vector") else e
    gamma, beta = film_forward(gen.w1, gen.b1, gen.w2, gen.b2, Tensor(vec))
    return FiLMParams(gamma.data[0], beta.data[0])


def align_features(h, p: FiLMParams) -> np.ndarray:
    """gamma * h + beta, row-wise when ``h`` is a matrix."""
    return np.asarray(h, dtype=np.float64) * p.gamma + p.beta


def unalign_features(z, p: FiLMParams) -> np.ndarray:
    return (np.asarray(z, dtype=np.float64) - p.beta) / p.gamma


def align_labels(label_ids, base: LabelBase, p: FiLMParams) -> np.ndarray:
    ids = np.asarray(label_ids, dtype=np.int64)
    if ids.size and (ids.max() >= base.l_max or ids.min() < 0):
        raise ConfigError(f"label id {int(ids.max())} exceeds label base size {base.l_max}")
    return base.table[ids] * p.gamma + p.beta


def lipschitz_bound(gen: FiLMGenerator) -> float:
    """Product of the spectral norms of the two weight matrices.

    relu and softplus are 1-Lipschitz, so this bounds the joint output
    change; ||dgamma|| + ||dbeta|| <= sqrt(2) * bound * ||de||.
    """
    return float(np.linalg.norm(gen.w1, 2) * np.linalg.norm(gen.w2, 2))
