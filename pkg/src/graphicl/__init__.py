"""Graph in-context learning: gradient-fingerprint domain embeddings, FiLM
alignment and dual prompt-aware attention over few-shot supports."""

__version__ = "0.1.0"

from graphicl.bundle import ModelBundle, load_bundle, save_bundle
from graphicl.inference import InferenceConfig, SupportSet, in_context_predict
from graphicl.trainer import TrainConfig, evaluate, pretrain

__all__ = [
    "InferenceConfig",
    "ModelBundle",
    "SupportSet",
    "TrainConfig",
    "__version__",
    "evaluate",
    "in_context_predict",
    "load_bundle",
    "pretrain",
    "save_bundle",
]
