"""Dual prompt-aware attention.

A query attends over the support features (feature side), the result is
mapped by a linear head into label space and attends over the label
prototypes (label side). Both sides use the same key/value projections
unless ``shared=False``. Scores are dot products with the prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from graphicl.errors import ConfigError
from graphicl.numkernel import Tensor, ops

DEFAULT_TAU = 0.2


@dataclass(frozen=True)
class DPAAConfig:
    d: int = 64
    layers: int = 1
    heads: int = 1
    shared: bool = True
    init: str = "identity"

    def validate(self):
        if self.layers < 1 or self.heads < 1:
            raise ConfigError("DPAA needs at least one layer and one head")
        if self.init not in ("identity", "random"):
            raise ConfigError(f"unknown DPAA init {self.init!r}")
        if self.d % self.heads:
            raise ConfigError(f"width {self.d} is not divisible by {self.heads} heads")

    def as_dict(self) -> dict:
        return {"d": self.d, "layers": self.layers, "heads": self.heads, "shared": self.shared,
                "init": self.init}


@dataclass
class DPAAParams:
    config: DPAAConfig
    arrays: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: DPAAConfig, seed: int = 0) -> "DPAAParams":
        config.validate()
        d = config.d
        rng = np.random.default_rng([seed, 50])

        def proj():
            noise = rng.normal(scale=1.0 / np.sqrt(d), size=(d, d))
            # identity start: plain dot-product attention plus a small perturbation
            return np.eye(d) + 0.1 * noise if config.init == "identity" else noise

        arrays = {}
        for l in range(config.layers):
            arrays[f"wq{l}"], arrays[f"wk{l}"], arrays[f"wv{l}"] = proj(), proj(), proj()
        if not config.shared:
            arrays["wk_label"], arrays["wv_label"] = proj(), proj()
        arrays["omega_w"] = proj()
        arrays["omega_b"] = np.zeros(d)
        return cls(config, arrays)

    def label_projections(self, p: dict | None = None):
        p = self.arrays if p is None else p
        if self.config.shared:
            last = self.config.layers - 1
            return p[f"wk{last}"], p[f"wv{last}"]
        return p["wk_label"], p["wv_label"]


@dataclass
class PromptSet:
    """Aligned support features and label prototypes for one episode.

    Row c of ``prototypes`` is the c-th episode class; ``support_classes``
    tags each support row with its episode-class position.
    """

    support: np.ndarray
    prototypes: np.ndarray
    prototype_ids: np.ndarray
    support_classes: np.ndarray

    def __post_init__(self):
        if len(self.support) == 0 or len(self.prototypes) == 0:
            raise ConfigError("prompt needs at least one support row and one prototype")
        if len(self.support_classes) != len(self.support):
            raise ConfigError("support class tags do not match support rows")
        if len(self.prototype_ids) != len(self.prototypes):
            raise ConfigError("prototype ids do not match prototype rows")


def _mha(q, k_src, v_src, wk, wv, heads: int):
    keys = ops.matmul(k_src, wk)
    values = ops.matmul(v_src, wv)
    d = keys.shape[1]
    if heads == 1:
        return ops.attention(q, keys, values, 1.0 / np.sqrt(d))
    dh = d // heads
    outs = [
        ops.attention(ops.slice_cols(q, h * dh, (h + 1) * dh), ops.slice_cols(keys, h * dh, (h + 1) * dh),
                      ops.slice_cols(values, h * dh, (h + 1) * dh), 1.0 / np.sqrt(dh))
        for h in range(heads)
    ]
    return ops.concat(outs, axis=1)


def feature_side(params: DPAAParams, p: dict, z_q, support):
    z = z_q
    for l in range(params.config.layers):
        q = ops.matmul(z, p[f"wq{l}"])
        z = _mha(q, support, support, p[f"wk{l}"], p[f"wv{l}"], params.config.heads)
    return z


def label_side(params: DPAAParams, p: dict, z_out, prototypes):
    wk, wv = params.label_projections(p)
    q = ops.row_add(ops.matmul(z_out, p["omega_w"]), p["omega_b"])
    return _mha(q, prototypes, prototypes, wk, wv, params.config.heads)


def scores_tracked(params: DPAAParams, p: dict, z_q, support, prototypes):
    """Score matrix (queries x classes); ``p`` may hold Tensors for training."""
    z_out = feature_side(params, p, z_q, support)
    u_out = label_side(params, p, z_out, prototypes)
    return ops.matmul(u_out, ops.transpose(prototypes))


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim == 1 else x


def feature_attention(z_q, prompt: PromptSet, params: DPAAParams) -> np.ndarray:
    out = feature_side(params, params.arrays, Tensor(_rows(z_q)), Tensor(prompt.support)).data
    return out[0] if np.ndim(z_q) == 1 else out


def label_attention(z_out, prompt: PromptSet, params: DPAAParams) -> np.ndarray:
    out = label_side(params, params.arrays, Tensor(_rows(z_out)), Tensor(prompt.prototypes)).data
    return out[0] if np.ndim(z_out) == 1 else out


def score(u_out, prompt: PromptSet) -> np.ndarray:
    return np.asarray(u_out, dtype=np.float64) @ prompt.prototypes.T


def query_scores(z_q, prompt: PromptSet, params: DPAAParams) -> np.ndarray:
    """Scores for a single query vector through the full attention pipeline."""
    return score(label_attention(feature_attention(z_q, prompt, params), prompt, params), prompt)


def episode_loss(scores, targets, tau: float = DEFAULT_TAU):
    """Mean cross-entropy of softmax(scores / tau); returns a Tensor."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return ops.cross_entropy(ops.scale(scores, 1.0 / tau), targets)
