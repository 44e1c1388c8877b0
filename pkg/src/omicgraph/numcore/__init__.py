"""Dense tensors with reverse-mode autodiff plus CSR sparse products."""
from . import ops
from .gradcheck import check_params, finite_diff_check
from .ops import (
    add, bce_with_logits, concat, div, dropout, exp, gather_rows, layer_norm, leaky_relu, log,
    matmul, mean, mean_rows, mul, neg, relu, reshape, scatter_rows, segment_mean, segment_softmax,
    sigmoid, softmax, spmm, sqrt, sub, tanh, transpose,
)
from .ops import sum as sum_  # noqa: F401
from .sparse import SparseMatrix, densify
from .tensor import Tensor, backward, check_finite

__all__ = [
    "Tensor", "SparseMatrix", "backward", "check_finite", "densify", "ops",
    "finite_diff_check", "check_params",
    "add", "sub", "mul", "div", "neg", "matmul", "spmm", "relu", "leaky_relu", "sigmoid", "tanh",
    "exp", "log", "sqrt", "softmax", "dropout", "concat", "reshape", "transpose", "mean",
    "mean_rows", "segment_mean", "gather_rows", "scatter_rows", "segment_softmax", "layer_norm",
    "bce_with_logits",
]
