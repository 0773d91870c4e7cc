"""Differentiable operations on :class:`~dogpain.numerics.tensor.Tensor`.

Shapes never broadcast implicitly. Python numbers and zero-dimensional
tensors act as scalars; anything else must match exactly or go through
:func:`expand` / :func:`bias_add`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from numbers import Number
from typing import Sequence

import numpy as np

from dogpain.errors import ConfigurationError, ContractError, DimensionError
from dogpain.numerics.tensor import Tensor, as_tensor, dtype

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _node(data, op, parents, backward) -> Tensor:
    return Tensor(data, op=op, parents=parents, backward=backward)


def _is_scalar(x) -> bool:
    return isinstance(x, Number) or (isinstance(x, Tensor) and x.ndim == 0)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------- binary


def add(a, b) -> Tensor:
    if isinstance(a, Number):
        a, b = b, a
    a = as_tensor(a)
    if isinstance(b, Number):
        return _node(a.data + b, "add", (a,), lambda g: (g,))
    b = as_tensor(b)
    if b.ndim == 0 and a.ndim > 0:
        return _node(a.data + b.data, "add", (a, b), lambda g: (g, g.sum()))
    if a.ndim == 0 and b.ndim > 0:
        return add(b, a)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    """Hadamard product, or scaling when one side is a scalar."""
    if isinstance(a, Number):
        a, b = b, a
    a = as_tensor(a)
    if isinstance(b, Number):
        s = float(b)
        return _node(a.data * s, "scale", (a,), lambda g: (g * s,))
    b = as_tensor(b)
    if b.ndim == 0 and a.ndim > 0:
        ad, bd = a.data, b.data
        return _node(ad * bd, "scale", (a, b), lambda g: (g * bd, (g * ad).sum()))
    if a.ndim == 0 and b.ndim > 0:
        return mul(b, a)
    _same_shape(a, b, "hadamard")
    ad, bd = a.data, b.data
    return _node(ad * bd, "hadamard", (a, b), lambda g: (g * bd, g * ad))


hadamard = mul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``m×k`` and ``k×n`` operands.

    Three-dimensional operands are treated as equal-sized batches of matrices.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise DimensionError(f"matmul: unsupported ranks {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _node(ad @ bd, "matmul", (a, b), backward)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat ``x`` along new leading axes so that it takes ``shape``."""
    shape = tuple(shape)
    lead = len(shape) - x.ndim
    if lead < 0 or shape[lead:] != x.shape:
        raise DimensionError(f"expand: cannot expand {x.shape} to {shape}")
    axes = tuple(range(lead))
    return _node(np.broadcast_to(x.data, shape), "expand", (x,), lambda g: (g.sum(axis=axes),))


def bias_add(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-D bias along ``axis`` of ``x`` (features for dense, channels for conv)."""
    axis = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise DimensionError(f"bias_add: bias {b.shape} does not fit axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return _node(
        x.data + b.data.reshape(view), "bias_add", (x, b), lambda g: (g, g.sum(axis=others))
    )


# ------------------------------------------------------------------ unary


def sigmoid(x: Tensor) -> Tensor:
    # tanh form: never overflows and avoids masked indexing
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    d = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(d)
    return _node(out, "log", (x,), lambda g: (g / d,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    d = x.data
    mask = (d >= lo) & (d <= hi)
    return _node(np.clip(d, lo, hi), "clamp", (x,), lambda g: (g * mask,))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"hadamard": mul, "add": add}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch one of ``sigmoid``, ``tanh``, ``relu``, ``hadamard`` or ``add``."""
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one operand")
        return _UNARY[op](as_tensor(args[0]))
    if op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two operands")
        return _BINARY[op](*args)
    raise ContractError(f"unknown elementwise op {op!r}")


# -------------------------------------------------------------- reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(x.data.sum(axis=axis, keepdims=keepdims), "sum", (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    if v.size == 0 or v.ndim == 0:
        raise DimensionError(f"softmax: empty input of shape {v.shape}")
    d = v.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, "softmax", (v,), backward)


# ------------------------------------------------------------ structural


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _node(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), "transpose", (x,), lambda g: (g.transpose(inverse),))


def getitem(x: Tensor, index) -> Tensor:
    """Basic (integer/slice) indexing."""
    src = x.shape

    def backward(g):
        full = np.zeros(src, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _node(x.data[index], "getitem", (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: no inputs")
    ref = tensors[0].ndim
    axis_n = axis % ref
    for t in tensors:
        if t.ndim != ref or t.shape[:axis_n] + t.shape[axis_n + 1 :] != (
            tensors[0].shape[:axis_n] + tensors[0].shape[axis_n + 1 :]
        ):
            raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    splits = np.cumsum([t.shape[axis_n] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis_n))

    return _node(np.concatenate([t.data for t in tensors], axis=axis_n), "concat", tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack: no inputs")
    for t in tensors:
        _same_shape(tensors[0], t, "stack")
    axis_n = axis % (tensors[0].ndim + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=axis_n) for i in range(len(tensors)))

    return _node(np.stack([t.data for t in tensors], axis=axis_n), "stack", tensors, backward)


def unstack(x: Tensor, axis: int = 0) -> list[Tensor]:
    index = [slice(None)] * x.ndim
    out = []
    for i in range(x.shape[axis]):
        index[axis] = i
        out.append(getitem(x, tuple(index)))
    return out


# ------------------------------------------------------------ convolution


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N,C,H,W) -> (C*k*k, N*H*W) patches under 'same' zero padding.

    Rows follow the flattened kernel order, so ``kern.reshape(O, -1) @ cols``
    is the convolution with channel-major output.
    """
    n, c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p : p + h, p : p + w] = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, h, w), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, :, di : di + h, dj : dj + w]
    return cols.reshape(c * k * k, n * h * w)


def _conv_raw(x: np.ndarray, kern: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    n, _, h, w = x.shape
    o, _, k, _ = kern.shape
    if cols is None:
        cols = _im2col(x, k)
    out = kern.reshape(o, -1) @ cols
    return np.ascontiguousarray(out.reshape(o, n, h, w).transpose(1, 0, 2, 3))


def conv2d(x: Tensor, kernels: Tensor) -> Tensor:
    """Stride-1 cross-correlation with 'same' zero padding and no bias.

    Args:
        x: ``C_in×H×W`` or batched ``N×C_in×H×W``.
        kernels: ``C_out×C_in×k×k`` with odd ``k``.
    """
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(f"conv2d: kernels must be C_out×C_in×k×k, got {kernels.shape}")
    k = kernels.shape[2]
    if k % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel extent must be odd, got {k}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d: input must be C×H×W or N×C×H×W, got {x.shape}")
    xd = x.data if batched else x.data[None]
    if xd.shape[1] != kernels.shape[1]:
        raise DimensionError(
            f"conv2d: input channels {xd.shape[1]} do not match kernels {kernels.shape}"
        )
    kd = kernels.data
    n, c, h, w = xd.shape
    o = kd.shape[0]
    cols = _im2col(xd, k)
    out = _conv_raw(xd, kd, cols)

    def backward(g):
        gb = g if batched else g[None]
        gx = gk = None
        if kernels.requires_grad:
            gmat = np.ascontiguousarray(gb.transpose(1, 0, 2, 3)).reshape(o, n * h * w)
            gk = (gmat @ cols.T).reshape(kd.shape)
        if x.requires_grad:
            flipped = np.ascontiguousarray(kd.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            gx = _conv_raw(gb, flipped)
            if not batched:
                gx = gx[0]
        return gx, gk

    return _node(out if batched else out[0], "conv2d", (x, kernels), backward)


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping 2×2 max pooling over the last two axes; odd extents round up.

    The adjoint goes to the first maximal element in row-major window order.
    """
    if window != 2:
        raise ConfigurationError("maxpool2d supports window 2 only")
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise DimensionError(f"maxpool2d: bad input shape {x.shape}")
    d = x.data
    *lead, h, w = d.shape
    ho, wo = -(-h // 2), -(-w // 2)
    if (h % 2) or (w % 2):
        pad = [(0, 0)] * len(lead) + [(0, 2 * ho - h), (0, 2 * wo - w)]
        d = np.pad(d, pad, constant_values=-np.inf)
    win = d.reshape(*lead, ho, 2, wo, 2)
    nl = len(lead)
    win = np.moveaxis(win, nl + 1, nl + 2).reshape(*lead, ho, wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros((*lead, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(full, arg[..., None], g[..., None], axis=-1)
        full = full.reshape(*lead, ho, wo, 2, 2)
        full = np.moveaxis(full, nl + 2, nl + 1).reshape(*lead, 2 * ho, 2 * wo)
        return (full[..., :h, :w],)

    return _node(out, "maxpool2d", (x,), backward)


# ---------------------------------------------------------- batch norm


@dataclass
class BatchNormState:
    """Per-channel running statistics, updated in place by train-mode calls."""

    channels: int
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    updates: int = 0

    def __post_init__(self):
        # statistics live in the precision active at construction
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels, dtype=dtype())
        if self.running_var is None:
            self.running_var = np.ones(self.channels, dtype=dtype())


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    ``train`` uses batch statistics and folds them into ``state`` (a
    running average for the first updates, then momentum 0.9); ``infer`` uses the running statistics.
    """
    if x.ndim < 2 or x.shape[0] == 0:
        raise ConfigurationError(f"batchnorm: empty batch or bad shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: gamma/beta must have shape ({c},)")
    axes = (0,) + tuple(range(2, x.ndim))
    view = [1] * x.ndim
    view[1] = c
    gd, bd = gamma.data.reshape(view), beta.data.reshape(view)
    eps = state.eps
    if mode == "infer":
        mu = state.running_mean.astype(dtype()).reshape(view)
        inv = (1.0 / np.sqrt(state.running_var + eps)).astype(dtype()).reshape(view)
        xhat = (x.data - mu) * inv
        out = gd * xhat + bd

        def backward_infer(g):
            return g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return _node(out, "batchnorm", (x, gamma, beta), backward_infer)
    if mode != "train":
        raise ContractError(f"batchnorm: unknown mode {mode!r}")
    m = x.size // c
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gd * xhat + bd
    unbiased = var.reshape(c) * (m / (m - 1)) if m > 1 else var.reshape(c)
    # cumulative average until 1/n falls below 1 - momentum, then the usual
    # exponential average; the initial statistics never leak into inference
    state.updates += 1
    keep = min(state.momentum, 1.0 - 1.0 / state.updates)
    kind = state.running_mean.dtype
    state.running_mean = (keep * state.running_mean + (1 - keep) * mu.reshape(c)).astype(kind)
    state.running_var = (keep * state.running_var + (1 - keep) * unbiased).astype(kind)

    def backward(g):
        dxhat = g * gd
        gx = (inv / m) * (
            m * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(out, "batchnorm", (x, gamma, beta), backward)
