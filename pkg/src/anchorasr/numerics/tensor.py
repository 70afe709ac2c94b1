"""Tensors and a reverse-mode gradient tape.

Operations executed while a :class:`Tape` is active are recorded together with
a closure that maps output gradients to input gradients. Outside of a tape the
same functions run as plain numpy computations, which is what decoding uses.
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from . import backend

_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array that may participate in gradient recording."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Node:
    __slots__ = ("outputs", "inputs", "backward")

    def __init__(self, outputs, inputs, backward):
        self.outputs = outputs
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ``gradients`` replays the record backward.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def gradients(
        self, loss: Tensor, wrt: Mapping[str, Tensor]
    ) -> dict[str, np.ndarray]:
        """Gradient of scalar ``loss`` for every tensor in ``wrt``.

        Tensors that did not contribute to the loss get an all-zero gradient.
        """
        if loss.data.size != 1:
            raise ValueError("loss must be a scalar tensor")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            outs = [grads.pop(id(o), None) for o in node.outputs]
            if all(g is None for g in outs):
                continue
            outs = [
                np.zeros_like(o.data) if g is None else g
                for o, g in zip(node.outputs, outs)
            ]
            in_grads = node.backward(outs if len(outs) > 1 else outs[0])
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
        out = {}
        for name, t in wrt.items():
            g = grads.get(id(t))
            out[name] = np.zeros_like(t.data) if g is None else np.asarray(g).reshape(t.shape)
        return out


def current_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, inputs: Sequence[Tensor], backward: Callable):
    tape = current_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        if isinstance(out_data, tuple):
            return tuple(Tensor(d) for d in out_data)
        return Tensor(out_data)
    if isinstance(out_data, tuple):
        outs = tuple(Tensor(d, requires_grad=True) for d in out_data)
        tape.nodes.append(_Node(outs, tuple(inputs), backward))
        return outs
    out = Tensor(out_data, requires_grad=True)
    tape.nodes.append(_Node((out,), tuple(inputs), backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = stable_sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _record(a.data * keep, (a,), lambda g: (g * keep,))


def linear(a: Tensor) -> Tensor:
    return a


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "tanh": tanh,
    "linear": linear,
}


# -- shape ---------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _record(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (g.transpose(inv),),
    )


def getitem(a: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` (embedding)."""
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return _record(table.data[index], (table,), back)


def gather_time(x: Tensor, index: np.ndarray) -> Tensor:
    """``out[b, t] = x[b, index[b, t]]`` for a (B, T, D) tensor."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])[:, None]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, index), g)
        return (full,)

    return _record(x.data[rows, index], (x,), back)


# -- reductions / linear algebra -------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(a.data @ b.data, (a, b), back)


def masked_softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; positions with ``mask == 0`` get zero mass."""
    z = x.data
    if mask is not None:
        valid = np.asarray(mask, dtype=bool)
        if not valid.any(axis=-1).all():
            raise ValueError("every row needs at least one unmasked position")
        z = np.where(valid, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _record(y, (x,), back)


def max_over_time(x: Tensor, mask: np.ndarray) -> Tensor:
    """Max over axis 1 of a (B, T, D) tensor restricted to valid frames."""
    valid = np.asarray(mask, dtype=bool)[:, :, None]
    z = np.where(valid, x.data, -np.inf)
    arg = np.argmax(z, axis=1)
    rows = np.arange(x.shape[0])[:, None]
    cols = np.arange(x.shape[2])[None, :]

    def back(g):
        full = np.zeros_like(x.data)
        full[rows, arg, cols] = g
        return (full,)

    return _record(x.data[rows, arg, cols], (x,), back)


# -- losses ------------------------------------------------------------------


def softmax_cross_entropy(
    logits: Tensor, targets: np.ndarray, weights: np.ndarray
) -> Tensor:
    """``sum(weights * -log_softmax(logits)[targets])`` over all leading axes."""
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    z = logits.data
    m = np.max(z, axis=-1, keepdims=True)
    lse = m + np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -np.sum(weights * picked)

    def back(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return (g * weights[..., None] * (p - onehot),)

    return _record(np.asarray(loss), (logits,), back)


def binary_cross_entropy(
    p: Tensor, labels: np.ndarray, weights: np.ndarray, eps: float = 1e-12
) -> Tensor:
    """``sum(weights * BCE(p, labels))`` with probabilities clipped to ``[eps, 1-eps]``."""
    y = np.asarray(labels, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    q = np.clip(p.data, eps, 1.0 - eps)
    loss = -np.sum(w * (y * np.log(q) + (1.0 - y) * np.log1p(-q)))

    def back(g):
        return (g * w * (-y / q + (1.0 - y) / (1.0 - q)),)

    return _record(np.asarray(loss), (p,), back)


# -- convolution ---------------------------------------------------------------


def conv_output_size(n: int, stride: int) -> int:
    return -(-n // stride)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: tuple[int, int]) -> Tensor:
    """2-D convolution of (B, C_in, L, F) input with right-side zero padding.

    Output lengths are ``ceil(L / stride_t)`` and ``ceil(F / stride_f)``.
    """
    B, cin, L, F = x.shape
    cout, cin_w, kt, kf = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv expects {cin_w} input channels, got {cin}")
    st, sf = stride
    T, Fo = conv_output_size(L, st), conv_output_size(F, sf)
    Lp = max((T - 1) * st + kt, L)
    Fp = max((Fo - 1) * sf + kf, F)
    xp = np.zeros((B, cin, Lp, Fp))
    xp[:, :, :L, :F] = x.data
    w = weight.data
    out = np.zeros((B, T, Fo, cout))
    windows = []
    for i in range(kt):
        for j in range(kf):
            xs = xp[:, :, i : i + (T - 1) * st + 1 : st, j : j + (Fo - 1) * sf + 1 : sf]
            windows.append((i, j, xs))
            out += np.tensordot(xs, w[:, :, i, j], axes=([1], [1]))
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]

    def back(g):
        gt = g.transpose(0, 2, 3, 1)  # B, T, Fo, cout
        gw = np.zeros_like(w)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i, j, xs in windows:
            gw[:, :, i, j] = np.tensordot(gt, xs, axes=([0, 1, 2], [0, 2, 3]))
            if gxp is not None:
                contrib = np.tensordot(gt, w[:, :, i, j], axes=([3], [0]))
                gxp[:, :, i : i + (T - 1) * st + 1 : st, j : j + (Fo - 1) * sf + 1 : sf] += (
                    contrib.transpose(0, 3, 1, 2)
                )
        gx = None if gxp is None else gxp[:, :, :L, :F]
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record(np.ascontiguousarray(out), (x, weight, bias), back)


# -- recurrent -----------------------------------------------------------------


def lstm_recurrence(xw: Tensor, U: Tensor) -> Tensor:
    """Run the LSTM recurrence over pre-projected inputs.

    ``xw`` is (B, T, 4H) and already contains ``x @ W + b``; gate order is
    input, forget, candidate, output. Returns hidden states (B, T, H) with zero
    initial state.
    """
    xw_data = np.ascontiguousarray(xw.data)
    U_data = np.ascontiguousarray(U.data)
    hs, cache = backend.recurrence_forward(xw_data, U_data)

    def back(g):
        dxw, dU = backend.recurrence_backward(
            np.ascontiguousarray(g), U_data, hs, cache
        )
        return dxw, dU

    return _record(hs, (xw, U), back)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, U: Tensor, b: Tensor):
    """One LSTM step on a batch; returns ``(h_new, c_new)``."""
    H = h.shape[-1]
    z = x.data @ W.data + h.data @ U.data + b.data
    a = stable_sigmoid(z)
    a[..., 2 * H : 3 * H] = np.tanh(z[..., 2 * H : 3 * H])
    i, f, gg, o = a[..., :H], a[..., H : 2 * H], a[..., 2 * H : 3 * H], a[..., 3 * H :]
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def back(grads):
        dh, dc_out = grads
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_out
        dz = np.concatenate(
            [
                dc * gg * i * (1.0 - i),
                dc * c.data * f * (1.0 - f),
                dc * i * (1.0 - gg * gg),
                do * o * (1.0 - o),
            ],
            axis=-1,
        )
        return (
            dz @ W.data.T,
            dz @ U.data.T,
            dc * f,
            x.data.T @ dz,
            h.data.T @ dz,
            dz.sum(axis=0),
        )

    return _record((h_new, c_new), (x, h, c, W, U, b), back)
