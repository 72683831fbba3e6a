"""Minimal tensor library with reverse-mode differentiation."""

from .ops import (
    BatchNorm,
    add,
    batchnorm,
    concat,
    concat_channels,
    conv1d,
    cross_entropy,
    dense,
    dropout,
    exp,
    global_avg_pool,
    he_uniform,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    sub,
    tanh,
)
from .ops import sum as sum_
from .tensor import Tensor, as_tensor, backward

__all__ = [
    "BatchNorm", "Tensor", "add", "as_tensor", "backward", "batchnorm", "concat",
    "concat_channels", "conv1d", "cross_entropy", "dense", "dropout", "exp",
    "global_avg_pool", "he_uniform", "log", "log_softmax", "matmul", "mean", "mul",
    "relu", "reshape", "softmax", "sub", "sum_", "tanh",
]
