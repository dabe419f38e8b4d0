"""Episode sampling and two-stage pretraining.

Stage A fingerprints every pretraining graph with its full labels and fits
the domain embedder to preserve pairwise fingerprint distances. Stage B
freezes the encoder initialization and the embedder and trains the FiLM
generators, the label base and the attention weights on m-way k-shot
episodes drawn from uniformly chosen graphs.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from graphicl.aligners import FiLMGenerator, LabelBase, film_forward
from graphicl.bundle import ModelBundle
from graphicl.dpaa import DEFAULT_TAU, DPAAConfig, DPAAParams, episode_loss, scores_tracked
from graphicl.embedder import (
    EmbedderArch,
    EmbedderConfig,
    EmbedderFit,
    EmbedderParams,
    embed_many,
    train_embedder,
)
from graphicl.encoder import DEFAULT_ETA, EncoderInit, encode, fingerprint
from graphicl.errors import ConfigError, DimensionError, EpisodeError, NumericError, TrainingError
from graphicl.graphcore.graph import Graph
from graphicl.inference import InferenceConfig, SupportSet, in_context_predict
from graphicl.numkernel import GradTape, OptimizerState, Tensor, ops, optimizer_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Episode:
    graph_index: int
    classes: np.ndarray
    support_items: np.ndarray
    support_pos: np.ndarray
    query_items: np.ndarray
    query_pos: np.ndarray

    @property
    def ways(self) -> int:
        return len(self.classes)

    def support(self) -> SupportSet:
        return SupportSet(self.support_items, self.classes[self.support_pos])

    @property
    def query_classes(self) -> np.ndarray:
        return self.classes[self.query_pos]


_warned: set = set()


def sample_episode(graph: Graph, m: int, k: int, T: int, rng, graph_index: int = 0) -> Episode:
    """Uniform classes, then uniform support and query items within each class.

    Classes with fewer than ``k + T`` labeled nodes are skipped. If fewer
    than ``m`` remain, ``m`` shrinks to what is available.
    """
    if m < 1 or k < 1 or T < 1:
        raise EpisodeError(f"episode sizes must be positive, got m={m} k={k} T={T}")
    labels = graph.labels
    counts = np.bincount(labels[labels >= 0], minlength=graph.num_classes)
    eligible = np.flatnonzero(counts >= k + T)
    if len(eligible) < min(m, 2):
        raise EpisodeError(f"graph {graph.name or '?'} has {len(eligible)} classes with at least "
                           f"{k + T} labeled nodes; an episode needs {min(m, 2)}")
    if len(eligible) < m:
        key = (graph.name, len(eligible), m)
        if key not in _warned:
            _warned.add(key)
            log.warning("graph %s: only %d eligible classes, using %d-way episodes",
                        graph.name or "?", len(eligible), len(eligible))
        m = len(eligible)
    classes = np.sort(rng.choice(eligible, size=m, replace=False))
    s_items, q_items = [], []
    for c in classes:
        picked = rng.permutation(np.flatnonzero(labels == c))[: k + T]
        s_items.append(picked[:k])
        q_items.append(picked[k:])
    pos = np.arange(m)
    return Episode(graph_index, classes, np.concatenate(s_items), np.repeat(pos, k),
                   np.concatenate(q_items), np.repeat(pos, T))


@dataclass
class TrainConfig:
    m: int = 10
    k: int = 5
    T: int = 5
    episodes: int = 10000
    tau: float = DEFAULT_TAU
    lr: float = 0.005
    weight_decay: float = 0.0005
    seed: int = 0
    accumulate: int = 1
    eta: float = DEFAULT_ETA
    d: int = 64
    d_e: int = 64
    l_max: int = 0  # 0: largest class count in the corpus
    graph_weighting: str = "uniform"
    embedder_lr: float = 0.001
    embedder_iters: int = 2000
    dpaa_layers: int = 1
    dpaa_heads: int = 1
    dpaa_shared: bool = True
    dpaa_init: str = "identity"
    cache_encodings: bool = True

    def validate(self):
        if self.m < 2 or self.k < 1 or self.T < 1:
            raise ConfigError(f"need m >= 2, k >= 1, T >= 1; got m={self.m} k={self.k} T={self.T}")
        if self.episodes < 1:
            raise ConfigError(f"episode count must be positive, got {self.episodes}")
        if self.tau <= 0 or self.lr <= 0 or self.eta < 0 or self.weight_decay < 0:
            raise ConfigError("tau and lr must be positive, eta and weight_decay nonnegative")
        if self.accumulate < 1:
            raise ConfigError("accumulate must be at least 1")
        if self.graph_weighting not in ("uniform", "size"):
            raise ConfigError(f"graph_weighting must be 'uniform' or 'size', got {self.graph_weighting!r}")
        self.dpaa_config().validate()

    def dpaa_config(self) -> DPAAConfig:
        return DPAAConfig(self.d, self.dpaa_layers, self.dpaa_heads, self.dpaa_shared, self.dpaa_init)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class PretrainResult:
    bundle: ModelBundle
    losses: list
    embedder_fit: EmbedderFit
    timings: dict = field(default_factory=dict)


def _trainables(bundle: ModelBundle) -> dict:
    out = {f"feature_gen.{k}": v for k, v in bundle.feature_gen.arrays().items()}
    out.update({f"label_gen.{k}": v for k, v in bundle.label_gen.arrays().items()})
    out["label_base"] = bundle.label_base.table
    out.update({f"dpaa.{k}": v for k, v in bundle.dpaa.arrays.items()})
    return out


def _install(bundle: ModelBundle, arrays: dict):
    def group(prefix):
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    bundle.feature_gen = FiLMGenerator.from_arrays(group("feature_gen."))
    bundle.label_gen = FiLMGenerator.from_arrays(group("label_gen."))
    bundle.label_base = LabelBase(arrays["label_base"])
    bundle.dpaa = DPAAParams(bundle.dpaa.config, group("dpaa."))


def episode_forward(bundle: ModelBundle, p: dict, H, e, episode: Episode, tau: float):
    """Episode loss as a Tensor; ``p`` maps trainable names to (possibly tracked) tensors."""
    e = Tensor(np.asarray(e).reshape(1, -1))
    gf, bf = film_forward(p["feature_gen.w1"], p["feature_gen.b1"], p["feature_gen.w2"], p["feature_gen.b2"], e)
    gl, bl = film_forward(p["label_gen.w1"], p["label_gen.b1"], p["label_gen.w2"], p["label_gen.b2"], e)
    support = ops.row_add(ops.row_mul(ops.take_rows(H, episode.support_items), gf), bf)
    queries = ops.row_add(ops.row_mul(ops.take_rows(H, episode.query_items), gf), bf)
    protos = ops.row_add(ops.row_mul(ops.take_rows(p["label_base"], episode.classes), gl), bl)
    dpaa = {k[len("dpaa."):]: v for k, v in p.items() if k.startswith("dpaa.")}
    scores = scores_tracked(bundle.dpaa, dpaa, queries, support, protos)
    return episode_loss(scores, episode.query_pos, tau)


def stage_a(corpus, theta0, cfg: TrainConfig):
    fps = [fingerprint(g, theta0=theta0, eta=cfg.eta) for g in corpus]
    arch = EmbedderArch(in_shape=tuple(theta0.shape), d_e=cfg.d_e)
    if len(corpus) >= 2:
        fit = train_embedder(fps, arch, EmbedderConfig(lr=cfg.embedder_lr, max_iter=cfg.embedder_iters,
                                                      seed=cfg.seed))
    else:
        # a single domain has no pairwise structure to fit
        params = EmbedderParams.init(arch, cfg.seed)
        fit = EmbedderFit(params, [0.0], 0.0, 0.0)
    return fps, fit


def _check_corpus(corpus, cfg: TrainConfig):
    if not corpus:
        raise ConfigError("pretraining corpus is empty")
    widths = {g.feature_dim for g in corpus}
    if len(widths) != 1:
        raise DimensionError(f"corpus feature widths differ: {sorted(widths)}; unify features first")
    top = max(g.num_classes for g in corpus)
    l_max = cfg.l_max or top
    if l_max < top:
        raise ConfigError(f"l_max={l_max} is below the largest class count in the corpus")
    return widths.pop(), l_max


def initial_bundle(corpus, cfg: TrainConfig | None = None):
    """Stage A plus freshly initialized Stage-B parameters; returns (bundle, embedder fit)."""
    cfg = cfg or TrainConfig()
    cfg.validate()
    corpus = list(corpus)
    d_o, l_max = _check_corpus(corpus, cfg)
    enc = EncoderInit.create(d_o, cfg.d, cfg.seed)
    fps, fit = stage_a(corpus, enc.theta0, cfg)
    bundle = ModelBundle(
        encoder=enc,
        embedder=fit.params,
        feature_gen=FiLMGenerator.init(cfg.d_e, cfg.d, seed=cfg.seed, stream=0),
        # N(0, I) base rows have norm ~sqrt(d); starting gamma at 1/sqrt(d) keeps the
        # first prototype scores O(1) instead of saturating the tempered softmax
        label_gen=FiLMGenerator.init(cfg.d_e, cfg.d, seed=cfg.seed, stream=1, gamma0=cfg.d ** -0.5),
        label_base=LabelBase.init(l_max, cfg.d, cfg.seed),
        dpaa=DPAAParams.init(cfg.dpaa_config(), cfg.seed),
        config={"tau": cfg.tau, "eta": cfg.eta, "d_o": d_o, "d": cfg.d, "d_e": cfg.d_e, "l_max": l_max,
                "train": cfg.as_dict()},
        domain_embeddings=embed_many(fps, fit.params),
        domain_names=[g.name or f"graph{i}" for i, g in enumerate(corpus)],
    )
    return bundle, fit


def pretrain(corpus, cfg: TrainConfig | None = None, progress=None) -> PretrainResult:
    """Run both stages and return the frozen bundle with the per-episode loss curve."""
    cfg = cfg or TrainConfig()
    corpus = list(corpus)
    timings = {}
    t0 = time.perf_counter()
    bundle, fit = initial_bundle(corpus, cfg)
    timings["stage_a"] = time.perf_counter() - t0
    frozen = bundle.section_hash("encoder.") + bundle.section_hash("embedder.")
    theta0 = bundle.encoder.theta0
    embeddings = bundle.domain_embeddings

    t0 = time.perf_counter()
    cache = [encode(g, theta0) for g in corpus] if cfg.cache_encodings else None
    sizes = np.array([g.num_nodes for g in corpus], dtype=np.float64)
    weights = sizes / sizes.sum() if cfg.graph_weighting == "size" else None
    rng = np.random.default_rng([cfg.seed, 60])
    state = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    params = _trainables(bundle)
    names = list(params)
    acc = {k: np.zeros_like(v) for k, v in params.items()}
    pending = 0
    losses = []
    for ep in range(cfg.episodes):
        gi = int(rng.choice(len(corpus), p=weights))
        g = corpus[gi]
        episode = sample_episode(g, cfg.m, cfg.k, cfg.T, rng, graph_index=gi)
        H = cache[gi] if cache is not None else encode(g, theta0)
        tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        try:
            with GradTape() as tape:
                loss = episode_forward(bundle, tensors, H, embeddings[gi], episode, cfg.tau)
        except NumericError as exc:
            raise TrainingError(f"non-finite values at episode {ep}: {exc}") from exc
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"loss became non-finite at episode {ep}")
        losses.append(value)
        for name, grad in zip(names, tape.gradient(loss, [tensors[k] for k in names])):
            acc[name] += grad
        pending += 1
        if pending == cfg.accumulate or ep == cfg.episodes - 1:
            params, state = optimizer_step(params, {k: v / pending for k, v in acc.items()}, state)
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            pending = 0
        if progress is not None:
            progress(ep, value)
    _install(bundle, params)
    timings["stage_b"] = time.perf_counter() - t0

    if bundle.section_hash("encoder.") + bundle.section_hash("embedder.") != frozen:
        raise TrainingError("frozen parameters changed during episodic training")
    log.info("pretrain: %d episodes, loss %.4f -> %.4f", cfg.episodes, losses[0], losses[-1])
    return PretrainResult(bundle, losses, fit, timings)


def evaluate_episode(bundle: ModelBundle, graph: Graph, episode: Episode,
                     config: InferenceConfig | None = None) -> float:
    """Fraction of the episode's queries predicted correctly."""
    pred = in_context_predict(bundle, graph, episode.support(), episode.query_items, config)
    return float(np.mean(pred.predictions == episode.query_classes))


def evaluate(bundle: ModelBundle, graph: Graph, ways: int, shots: int, episodes: int, queries: int = 10,
             seed: int = 0, config: InferenceConfig | None = None, jobs: int = 1) -> np.ndarray:
    """Accuracies of ``episodes`` independent evaluation episodes.

    Episodes are drawn up front from one generator, so the result does not
    depend on ``jobs``.
    """
    rng = np.random.default_rng([seed, 70, shots])
    drawn = [sample_episode(graph, ways, shots, queries, rng) for _ in range(episodes)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return np.array(list(pool.map(lambda ep: evaluate_episode(bundle, graph, ep, config), drawn)))
    return np.array([evaluate_episode(bundle, graph, ep, config) for ep in drawn])
