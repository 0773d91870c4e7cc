"""Minimal dense tensor engine with reverse-mode differentiation."""

from dogpain.numerics.gradcheck import grad_check
from dogpain.numerics.ops import (
    BatchNormState,
    add,
    batchnorm,
    bias_add,
    clamp,
    concat,
    conv2d,
    elementwise,
    exp,
    expand,
    getitem,
    hadamard,
    log,
    matmul,
    maxpool2d,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
    transpose,
    unstack,
)
from dogpain.numerics.ops import sum as tsum
from dogpain.numerics.tensor import (
    Tensor,
    as_tensor,
    dtype,
    get_precision,
    precision,
    set_precision,
)

__all__ = [
    "BatchNormState", "Tensor", "add", "as_tensor", "batchnorm", "bias_add", "clamp",
    "concat", "conv2d", "dtype", "elementwise", "exp", "expand", "get_precision",
    "getitem", "grad_check", "hadamard", "log", "matmul", "maxpool2d", "mean", "mul",
    "precision", "relu", "reshape", "set_precision", "sigmoid", "softmax", "stack",
    "sub", "tanh", "transpose", "tsum", "unstack",
]
