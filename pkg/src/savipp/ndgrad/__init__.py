"""Small reverse-mode autodiff library on numpy arrays."""

from . import ops
from .gradcheck import check_gradients, numeric_grad, relative_error
from .ops import (
    add, concat, conv2d, conv_transpose2d, div, exp, expand, getitem, group_norm, gru_cell,
    huber, layer_norm, linear, log, matmul, mean, mul, neg, relu, reshape, sigmoid,
    softmax_axis, sqrt, square, stack, stop_gradient, sub, sum, take, tanh, transpose,
)
from .tensor import ContractError, ShapeError, Tensor, backward, no_grad, set_debug

__all__ = [
    "ContractError", "ShapeError", "Tensor", "add", "backward", "check_gradients", "concat",
    "conv2d", "conv_transpose2d", "div", "exp", "expand", "getitem", "group_norm", "gru_cell",
    "huber", "layer_norm", "linear", "log", "matmul", "mean", "mul", "neg", "no_grad",
    "numeric_grad", "ops", "relative_error", "relu", "reshape", "set_debug", "sigmoid",
    "softmax_axis", "sqrt", "square", "stack", "stop_gradient", "sub", "sum", "take", "tanh",
    "transpose",
]
