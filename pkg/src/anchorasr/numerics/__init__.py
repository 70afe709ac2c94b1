"""Differentiable numeric substrate: tensors, a gradient tape, and kernels."""
from . import backend
from .functional import (
    ConvLayer,
    LSTMParams,
    conv_downsample,
    conv_stack,
    lstm_cell_step,
    softmax,
    time_stride,
)
from .gradcheck import GradCheckReport, NonDeterministicLossError, fd_resolution, grad_check
from .tensor import Tape, Tensor, stable_sigmoid

__all__ = [
    "ConvLayer",
    "GradCheckReport",
    "LSTMParams",
    "NonDeterministicLossError",
    "Tape",
    "Tensor",
    "backend",
    "conv_downsample",
    "conv_stack",
    "fd_resolution",
    "grad_check",
    "lstm_cell_step",
    "softmax",
    "stable_sigmoid",
    "time_stride",
]
