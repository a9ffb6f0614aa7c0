"""MAPUNetR: a from-scratch ViT-encoder / U-Net-decoder segmentation pipeline."""

from .autograd import Tensor
from .model import MAPUNetR, ModelConfig, AttentionRecord, predict_mask
from .optim import ScheduleConfig, lr_at, sgd_step
from .nn import Parameter, count_params
from .metrics import ConfusionCounts, MetricsReport, confusion, dice_loss, evaluate, metrics_from_confusion
from .preprocess import AugmentConfig, NormStats, Sample

__version__ = "0.1.0"

__all__ = [
    "AttentionRecord", "AugmentConfig", "ConfusionCounts", "MAPUNetR", "MetricsReport", "ModelConfig",
    "NormStats", "Parameter", "Sample", "ScheduleConfig", "Tensor", "confusion", "count_params",
    "dice_loss", "evaluate", "lr_at", "metrics_from_confusion", "predict_mask", "sgd_step",
]
