"""dualssl: dual-stream (CNN + transformer) semi-supervised image
classification with confidence-gated pseudo labels and cross-stream fusion."""

from .config import ExperimentConfig, ModelConfig
from .data import DatasetSplit, MixedBatch, SplitSpec
from .models import DualLogits, DualStreamModel, FusionPoint, combined_predict
from .objective import (
    LossBreakdown,
    MethodVariant,
    PseudoLabelResult,
    cross_entropy,
    generate_pseudo_labels,
    labeled_loss,
    step_objective,
    total_loss,
    unlabeled_loss,
)
from .trainer import MetricRecord, TrainConfig, evaluate, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "DualLogits",
    "DualStreamModel",
    "ExperimentConfig",
    "FusionPoint",
    "LossBreakdown",
    "MethodVariant",
    "MetricRecord",
    "MixedBatch",
    "ModelConfig",
    "PseudoLabelResult",
    "SplitSpec",
    "TrainConfig",
    "combined_predict",
    "cross_entropy",
    "evaluate",
    "generate_pseudo_labels",
    "labeled_loss",
    "lr_at",
    "step_objective",
    "total_loss",
    "train",
    "unlabeled_loss",
]
