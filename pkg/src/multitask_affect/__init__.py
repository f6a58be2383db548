"""Multitask facial-affect training and evaluation at desk scale."""

from .losses import LossWeights, attention_consistency, bce, ccc, ccc_loss, cross_entropy, multitask_loss
from .metrics import MetricReport, binary_f1, macro_f1_au, macro_f1_expr, p_score
from .model import DdamfnModel, ModelConfig, ModelOutput
from .tensor import Tensor, backward, grad_check, no_grad, tensor_new
from .thresholds import ThresholdSet, optimize_thresholds

__version__ = "0.1.0"

__all__ = [
    "DdamfnModel",
    "LossWeights",
    "MetricReport",
    "ModelConfig",
    "ModelOutput",
    "Tensor",
    "ThresholdSet",
    "attention_consistency",
    "backward",
    "bce",
    "binary_f1",
    "ccc",
    "ccc_loss",
    "cross_entropy",
    "grad_check",
    "macro_f1_au",
    "macro_f1_expr",
    "multitask_loss",
    "no_grad",
    "optimize_thresholds",
    "p_score",
    "tensor_new",
]
