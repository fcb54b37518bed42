"""Minimal dense-tensor engine with reverse-mode differentiation."""

from src.engine.autograd import Tape, Tensor, as_tensor, get_default_dtype, gradient, set_default_dtype

__all__ = ["Tape", "Tensor", "as_tensor", "gradient", "get_default_dtype", "set_default_dtype"]
