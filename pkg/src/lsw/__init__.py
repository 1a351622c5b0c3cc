"""Learned section weights (LSW) for multi-label document classification."""

from .data import Corpus, DocumentRecord, LabelIndex, SyntheticSpec, gen_synthetic, load_corpus, split
from .encoder import Encoder, Vocab, build_vocab, tokenize
from .evalx import MetricsReport, WeightReport, compare_runs, compute_metrics, export_weights
from .model import LswModel, ModelConfig
from .trainer import TrainConfig, resume, train

__all__ = [
    "Corpus",
    "DocumentRecord",
    "Encoder",
    "LabelIndex",
    "LswModel",
    "MetricsReport",
    "ModelConfig",
    "SyntheticSpec",
    "TrainConfig",
    "Vocab",
    "WeightReport",
    "build_vocab",
    "compare_runs",
    "compute_metrics",
    "export_weights",
    "gen_synthetic",
    "load_corpus",
    "resume",
    "split",
    "tokenize",
    "train",
]
