"""Generative zero-shot learning with a boundary loss and a multimodal cycle loss.

Pure numpy networks with hand-written gradients; see README.md for usage.
"""
from .dataset import (
    BundleError,
    PrototypeSet,
    SyntheticSpec,
    ZslDataset,
    compute_prototypes,
    generate_synthetic,
    load_bundle,
    validate,
    write_bundle,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    SynthesizedSet,
    evaluate,
    evaluate_gzsl,
    evaluate_zsl,
    feature_confusion_score,
    harmonic_mean,
    per_class_top1,
    synthesize,
    train_softmax,
)
from .losses import MODES, GeneratorBatch, LossWeights
from .model import ModelConfig, ModelParams, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainLog, TrainingAborted, train

__version__ = "0.1.0"

__all__ = [
    "BundleError",
    "PrototypeSet",
    "SyntheticSpec",
    "ZslDataset",
    "compute_prototypes",
    "generate_synthetic",
    "load_bundle",
    "validate",
    "write_bundle",
    "EvalConfig",
    "EvalReport",
    "SynthesizedSet",
    "evaluate",
    "evaluate_gzsl",
    "evaluate_zsl",
    "feature_confusion_score",
    "harmonic_mean",
    "per_class_top1",
    "synthesize",
    "train_softmax",
    "MODES",
    "GeneratorBatch",
    "LossWeights",
    "ModelConfig",
    "ModelParams",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "TrainLog",
    "TrainingAborted",
    "train",
]
