"""Single-sample numeric entry points built on the tape ops."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T


def softmax(energies) -> np.ndarray:
    """Numerically safe softmax of a 1-D sequence."""
    z = np.asarray(energies, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("softmax needs a non-empty 1-D sequence")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains non-finite values")
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True)
class LSTMParams:
    """Weights of one LSTM cell: input ``W`` (D, 4H), recurrent ``U`` (H, 4H), bias (4H,)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def units(self) -> int:
        return self.U.shape[0]


def lstm_cell_step(x, state, params: LSTMParams) -> tuple[np.ndarray, np.ndarray]:
    h, c = (np.asarray(s, dtype=np.float64) for s in state)
    x = np.asarray(x, dtype=np.float64)
    H = params.units
    if params.U.shape != (H, 4 * H) or params.b.shape != (4 * H,):
        raise ValueError("inconsistent LSTM parameter shapes")
    if params.W.shape != (x.shape[-1], 4 * H):
        raise ValueError(
            f"input dim {x.shape[-1]} does not match W of shape {params.W.shape}"
        )
    if h.shape[-1] != H or c.shape[-1] != H:
        raise ValueError(f"state must have {H} units")
    h_new, c_new = T.lstm_cell(
        T.Tensor(np.atleast_2d(x)),
        T.Tensor(np.atleast_2d(h)),
        T.Tensor(np.atleast_2d(c)),
        T.Tensor(params.W),
        T.Tensor(params.U),
        T.Tensor(params.b),
    )
    if x.ndim == 1:
        return h_new.data[0], c_new.data[0]
    return h_new.data, c_new.data


@dataclass(frozen=True)
class ConvLayer:
    """One convolution over (time, frequency) with its weights.

    ``weight`` has shape (out_channels, in_channels, kernel_t, kernel_f).
    """

    weight: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int]
    activation: str = "relu"


def time_stride(strides: Sequence[tuple[int, int]]) -> int:
    return math.prod(s[0] for s in strides)


def conv_stack(x: T.Tensor, layers, lengths: np.ndarray | None = None) -> T.Tensor:
    """Apply conv layers to a (B, 1, L, F) tensor; returns (B, T, C * F').

    With per-sample ``lengths``, frames past each sample's end are zeroed after
    every layer so batched output matches unbatched output.
    """
    out = x
    for weight, bias, stride, activation in layers:
        out = T.conv2d(out, weight, bias, stride)
        out = T.ACTIVATIONS[activation](out)
        if lengths is not None:
            lengths = -(-np.asarray(lengths) // stride[0])
            keep = np.arange(out.shape[2])[None, :] < lengths[:, None]
            out = T.mul(out, keep[:, None, :, None].astype(np.float64))
    B, C, steps, F = out.shape
    return T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, steps, C * F))


def conv_downsample(features, layers: Sequence[ConvLayer]) -> np.ndarray:
    """Convolve one (L, F) feature matrix through ``layers``.

    Output has ``ceil(L / prod(time strides))`` frames.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a (frames, dims) matrix")
    need = time_stride([layer.stride for layer in layers])
    if x.shape[0] < need:
        raise ValueError(
            f"input of {x.shape[0]} frames is shorter than the receptive field ({need})"
        )
    out = conv_stack(
        T.Tensor(x[None, None]),
        [
            (T.Tensor(layer.weight), T.Tensor(layer.bias), tuple(layer.stride), layer.activation)
            for layer in layers
        ],
    )
    return out.data[0]
