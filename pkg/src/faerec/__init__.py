"""Tail-item sequential recommendation by fusing and aligning ID and semantic item embeddings."""

from .alignment import AlignmentConfig
from .data import InteractionDataset, build_dataset, leave_one_out, load_interactions
from .evaluation import EvalReport, evaluate
from .model import FAERecModel, ModelConfig
from .semantic import SemanticStore, fit_pca, load_semantic, pca_project, synth_semantic
from .training import TrainConfig, train

__all__ = [
    "AlignmentConfig",
    "EvalReport",
    "FAERecModel",
    "InteractionDataset",
    "ModelConfig",
    "SemanticStore",
    "TrainConfig",
    "build_dataset",
    "evaluate",
    "fit_pca",
    "leave_one_out",
    "load_interactions",
    "load_semantic",
    "pca_project",
    "synth_semantic",
    "train",
]
