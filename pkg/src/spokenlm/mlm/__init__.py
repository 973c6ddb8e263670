"""Masked-prediction encoder for discrete or continuous inputs and targets."""

from .config import LOSSES, MaskingPolicy, ModelConfig, TrainSettings
from .core import ForwardResult, MaskedPredictionModel, pad_batch
from .gradcheck import GradCheckResult, gradient_check
from .io import read_model, write_model
from .losses import LossResult, compute_loss
from .masking import sample_masks
from .train import TrainResult, learning_rate, train

__all__ = [
    "LOSSES",
    "ForwardResult",
    "GradCheckResult",
    "LossResult",
    "MaskedPredictionModel",
    "MaskingPolicy",
    "ModelConfig",
    "TrainResult",
    "TrainSettings",
    "compute_loss",
    "gradient_check",
    "learning_rate",
    "pad_batch",
    "read_model",
    "sample_masks",
    "train",
    "write_model",
]
