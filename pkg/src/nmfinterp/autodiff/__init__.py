"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .gradcheck import GradCheckResult, grad_check, grad_check_report
from .optim import Adam, AdamState, adam_step, clip_grad_norm
from .tensor import ShapeError, Tensor, as_tensor, backward, default_dtype, parameter, precision

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckResult",
    "ShapeError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "clip_grad_norm",
    "default_dtype",
    "grad_check",
    "grad_check_report",
    "ops",
    "parameter",
    "precision",
]
