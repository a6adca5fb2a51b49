"""Minimal float64 tensor library with reverse-mode autodiff."""
from . import ops
from .checkpoint import (
    CheckpointError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .gradcheck import GradCheckResult, finite_diff_check
from .nn import (
    GRU,
    Conv2d,
    Dropout,
    EncoderBlock,
    GRUCell,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
)
from .optim import (
    Adam,
    NonFiniteGradientError,
    OptimizerState,
    adam_step,
    clip_by_global_norm,
    global_norm,
)
from .tensor import ShapeError, Tensor, no_grad

__all__ = [
    "Adam", "CheckpointError", "CheckpointVersionError", "Conv2d", "Dropout", "EncoderBlock",
    "GRU", "GRUCell", "GradCheckResult", "LayerNorm", "Linear", "Module", "MultiHeadAttention",
    "NonFiniteGradientError", "OptimizerState", "Parameter", "ShapeError", "Tensor",
    "adam_step", "clip_by_global_norm", "finite_diff_check", "global_norm", "load_checkpoint",
    "no_grad", "ops", "save_checkpoint",
]
