"""Domain embedder: Conv2D -> Conv2D -> Flatten -> Linear over fingerprints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from graphicl.encoder import DEFAULT_ETA, Fingerprint, fingerprint
from graphicl.errors import ConfigError, DimensionError, InputError, TrainingError
from graphicl.graphcore.graph import Graph
from graphicl.numkernel import GradTape, OptimizerState, Tensor, ops, optimizer_step

log = logging.getLogger(__name__)

DEFAULT_DE = 64


@dataclass(frozen=True)
class EmbedderArch:
    in_shape: tuple = (64, 64)
    channels: tuple = (8, 16)
    kernel: int = 3
    stride: int = 2
    d_e: int = DEFAULT_DE

    def conv_output(self) -> tuple:
        h, w = self.in_shape
        for _ in self.channels:
            h = (h - self.kernel) // self.stride + 1
            w = (w - self.kernel) // self.stride + 1
        if h < 1 or w < 1:
            raise ConfigError(f"fingerprint {self.in_shape} too small for the conv stack")
        return self.channels[-1], h, w

    def as_dict(self) -> dict:
        return {"in_shape": list(self.in_shape), "channels": list(self.channels),
                "kernel": self.kernel, "stride": self.stride, "d_e": self.d_e}

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderArch":
        return cls(tuple(d["in_shape"]), tuple(d["channels"]), d["kernel"], d["stride"], d["d_e"])


@dataclass
class EmbedderParams:
    arch: EmbedderArch
    arrays: dict = field(default_factory=dict)

    @classmethod
    def init(cls, arch: EmbedderArch, seed: int = 0) -> "EmbedderParams":
        rng = np.random.default_rng([seed, 20])
        arrays = {}
        c_in = 1
        for i, c_out in enumerate(arch.channels, start=1):
            fan_in = c_in * arch.kernel ** 2
            arrays[f"conv{i}_w"] = rng.normal(scale=np.sqrt(2.0 / fan_in),
                                              size=(c_out, c_in, arch.kernel, arch.kernel))
            arrays[f"conv{i}_b"] = np.zeros(c_out)
            c_in = c_out
        flat = int(np.prod(arch.conv_output()))
        arrays["fc_w"] = rng.normal(scale=np.sqrt(1.0 / flat), size=(flat, arch.d_e))
        arrays["fc_b"] = np.zeros(arch.d_e)
        return cls(arch, arrays)

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})


@dataclass(frozen=True)
class DomainEmbedding:
    vector: np.ndarray
    provenance: str = "in-context"


def _forward(arch: EmbedderArch, p: dict, images):
    h = images
    for i in range(1, len(arch.channels) + 1):
        h = ops.relu(ops.conv2d(h, p[f"conv{i}_w"], p[f"conv{i}_b"], stride=arch.stride))
    return ops.row_add(ops.matmul(ops.flatten(h), p["fc_w"]), p["fc_b"])


def _stack(deltas, arch: EmbedderArch) -> np.ndarray:
    deltas = [d.delta if isinstance(d, Fingerprint) else np.asarray(d, dtype=np.float64) for d in deltas]
    for d in deltas:
        if d.shape != tuple(arch.in_shape):
            raise DimensionError(f"fingerprint shape {d.shape} does not match embedder input {arch.in_shape}")
    return np.stack(deltas)[:, None, :, :]


def embed_many(fps, params: EmbedderParams) -> np.ndarray:
    """Embed a batch of fingerprints; returns an (M, d_e) array.

    Each fingerprint runs through the network on its own, so its embedding
    is bitwise independent of whatever else is in the batch.
    """
    images = _stack(fps, params.arch)
    return np.stack([_forward(params.arch, params.arrays, images[i:i + 1]).data[0] for i in range(len(images))])


def embed_domain(fp, params: EmbedderParams, provenance: str = "in-context") -> DomainEmbedding:
    return DomainEmbedding(embed_many([fp], params)[0], provenance)


def _pair_distances(deltas: np.ndarray) -> np.ndarray:
    flat = deltas.reshape(len(deltas), -1)
    with np.errstate(over="ignore", invalid="ignore"):
        return np.sqrt(np.maximum(((flat[:, None, :] - flat[None, :, :]) ** 2).sum(-1), 0.0))


def _lde(target: np.ndarray, emb: np.ndarray):
    """Loss over ordered pairs and its gradient w.r.t. the embedding rows."""
    diff = emb[:, None, :] - emb[None, :, :]
    with np.errstate(over="ignore", invalid="ignore"):
        dist = np.sqrt((diff ** 2).sum(-1))
        resid = dist - target
    np.fill_diagonal(resid, 0.0)
    loss = float((resid ** 2).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(dist > 0, resid / dist, 0.0)
    # each unordered pair appears twice in the ordered sum
    grad = 4.0 * (coef[:, :, None] * diff).sum(axis=1)
    return loss, grad


def lde_loss(fingerprints, embeddings) -> float:
    """Sum over ordered pairs i != j of (||dtheta_i - dtheta_j||_F - ||e_i - e_j||_2)^2."""
    if len(fingerprints) != len(embeddings):
        raise ConfigError("fingerprint and embedding lists differ in length")
    if len(fingerprints) < 2:
        raise ConfigError("lde_loss needs at least two domains")
    deltas = np.stack([f.delta if isinstance(f, Fingerprint) else np.asarray(f, dtype=np.float64)
                       for f in fingerprints])
    emb = np.stack([e.vector if isinstance(e, DomainEmbedding) else np.asarray(e, dtype=np.float64)
                    for e in embeddings])
    return _lde(_pair_distances(deltas), emb)[0]


@dataclass
class EmbedderConfig:
    lr: float = 0.001
    weight_decay: float = 0.0
    max_iter: int = 2000
    window: int = 50
    tol: float = 1e-6
    seed: int = 0


@dataclass
class EmbedderFit:
    params: EmbedderParams
    losses: list
    initial_loss: float
    final_loss: float


def train_embedder(fingerprints, arch: EmbedderArch | None = None, config: EmbedderConfig | None = None) -> EmbedderFit:
    """Fit the embedder so embedding distances match fingerprint distances.

    Stops when the loss improves by less than ``tol * initial`` over
    ``window`` iterations, or after ``max_iter``. Returns the parameters
    with the lowest loss seen.
    """
    config = config or EmbedderConfig()
    if len(fingerprints) < 2:
        raise ConfigError("train_embedder needs at least two fingerprints")
    first = fingerprints[0].delta if isinstance(fingerprints[0], Fingerprint) else np.asarray(fingerprints[0])
    arch = arch or EmbedderArch(in_shape=tuple(first.shape))
    images = _stack(fingerprints, arch)
    target = _pair_distances(images[:, 0])

    params = EmbedderParams.init(arch, config.seed)
    state = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    losses = []
    best, best_loss = params.copy(), np.inf
    for it in range(config.max_iter + 1):
        tensors = {k: Tensor(v, requires_grad=True) for k, v in params.arrays.items()}
        with GradTape() as tape:
            emb = _forward(arch, tensors, images)
        loss, g_emb = _lde(target, emb.data)
        if not np.isfinite(loss):
            raise TrainingError(f"embedder loss became non-finite at iteration {it}")
        losses.append(loss)
        if loss < best_loss:
            best, best_loss = params.copy(), loss
        if it == config.max_iter:
            break
        if it >= config.window and losses[it - config.window] - loss <= config.tol * losses[0]:
            break
        names = list(tensors)
        grads = dict(zip(names, tape.gradient(emb, [tensors[k] for k in names], seed=g_emb)))
        params.arrays, state = optimizer_step(params.arrays, grads, state)
    log.info("embedder: %d iterations, loss %.3e -> %.3e", len(losses), losses[0], best_loss)
    return EmbedderFit(best, losses, losses[0], best_loss)


def _conv_norm(w: np.ndarray, in_shape: tuple, stride: int, iters: int, rng) -> float:
    x = rng.normal(size=(1,) + in_shape)
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        t = Tensor(x, requires_grad=True)
        with GradTape() as tape:
            y = ops.conv2d(t, w, None, stride=stride)
        (back,) = tape.gradient(y, [t], seed=y.data)
        nrm = np.linalg.norm(back)
        if nrm == 0:
            return 0.0
        sigma = np.sqrt(nrm)
        x = back / nrm
    return float(sigma)


def lipschitz_estimate(params: EmbedderParams, iters: int = 50, seed: int = 0) -> float:
    """Product of the operator norms of each conv (as a linear map) and the linear layer."""
    arch = params.arch
    rng = np.random.default_rng(seed)
    shape = (1,) + tuple(arch.in_shape)
    bound = 1.0
    for i, c in enumerate(arch.channels, start=1):
        w = params.arrays[f"conv{i}_w"]
        bound *= _conv_norm(w, shape, arch.stride, iters, rng) * (1.0 + 1e-6)
        h = (shape[1] - arch.kernel) // arch.stride + 1
        wd = (shape[2] - arch.kernel) // arch.stride + 1
        shape = (c, h, wd)
    return bound * float(np.linalg.norm(params.arrays["fc_w"], 2))


def in_context_embedding(graph: Graph, support_items, support_labels, theta0, params: EmbedderParams,
                         eta: float = DEFAULT_ETA, num_classes: int | None = None) -> DomainEmbedding:
    """Fingerprint over the support set only, then embed it."""
    if len(support_items) == 0:
        raise InputError("in-context embedding needs a nonempty support set")
    fp = fingerprint(graph, support_items, support_labels, theta0, eta, num_classes=num_classes)
    return embed_domain(fp, params)
