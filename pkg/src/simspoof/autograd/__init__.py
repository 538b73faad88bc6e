"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .gradcheck import grad_check
from .ops import (
    absolute,
    adaptive_avg_pool,
    add,
    amax,
    arccos,
    clip,
    concat,
    conv2d,
    cos,
    div,
    elementwise,
    exp,
    getitem,
    gru,
    linear,
    log,
    matmul,
    max_pool2d,
    maximum,
    mean,
    mul,
    pool,
    relu,
    reshape,
    scale,
    selu,
    sigmoid,
    sin,
    sqrt,
    square,
    stack,
    sub,
    sum,
    tanh,
    transpose,
)
from .tensor import GraphError, NonFiniteError, ShapeError, Tensor, as_tensor, is_grad_enabled, no_grad

__all__ = [
    "Tensor",
    "GraphError",
    "NonFiniteError",
    "ShapeError",
    "as_tensor",
    "grad_check",
    "is_grad_enabled",
    "no_grad",
    "absolute",
    "adaptive_avg_pool",
    "add",
    "amax",
    "arccos",
    "clip",
    "concat",
    "conv2d",
    "cos",
    "div",
    "elementwise",
    "exp",
    "getitem",
    "gru",
    "linear",
    "log",
    "matmul",
    "max_pool2d",
    "maximum",
    "mean",
    "mul",
    "pool",
    "relu",
    "reshape",
    "scale",
    "selu",
    "sigmoid",
    "sin",
    "sqrt",
    "square",
    "stack",
    "sub",
    "sum",
    "tanh",
    "transpose",
]
