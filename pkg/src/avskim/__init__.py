"""Streaming audio-visual speaker extraction (causal AV-SkiM with an
autoregressive acoustic encoder)."""

from .config import ModelConfig, tiny_config
from .model import AVSkimModel, EmbeddingSeq, repeat_upsample
from .weights import WeightStore, init_weights

__all__ = [
    "AVSkimModel",
    "EmbeddingSeq",
    "ModelConfig",
    "WeightStore",
    "init_weights",
    "repeat_upsample",
    "tiny_config",
]
