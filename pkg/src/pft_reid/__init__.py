"""Occlusion-robust person re-identification transformer, self-contained.

A small vision transformer over patch sequences with three add-on modules
(learnable patch enhancement, sequence fusion/reconstruction, spatial
slicing), trained with SGD momentum on a float64 autodiff core, plus a
synthetic occluded-identity data generator and a CMC/mAP retrieval evaluator.
"""

from .autodiff import Tensor, grad_check
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, PatchConfig, TrainConfig, compute_grid
from .data import (
    AugmentFlags,
    DatasetRecord,
    SyntheticSpec,
    augment,
    generate_identity,
    load_manifest,
    make_synthetic_dataset,
)
from .errors import ConfigError, DataError, DivergenceError
from .estimator import PFTReId
from .evaluation import RetrievalReport, distance_matrix, evaluate, feature_extract
from .model import PFTModel
from .training import TrainResult, cosine_lr, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "AugmentFlags",
    "ConfigError",
    "DataError",
    "DatasetRecord",
    "DivergenceError",
    "ModelConfig",
    "PFTModel",
    "PFTReId",
    "PatchConfig",
    "RetrievalReport",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "augment",
    "compute_grid",
    "cosine_lr",
    "distance_matrix",
    "evaluate",
    "feature_extract",
    "generate_identity",
    "grad_check",
    "load_checkpoint",
    "load_manifest",
    "make_synthetic_dataset",
    "save_checkpoint",
    "sgd_step",
    "train",
]
