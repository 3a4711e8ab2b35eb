from . import ops
from .gradcheck import grad_check, numerical_grad
from .ops import (
    add, batchnorm1d, channel_matmul, concat, conv1d, global_avg_pool_time, index,
    linear, matmul, mean, mean_pool_vars, mse_loss, mul, relu, reshape, sigmoid,
    silu, square, sub, swapaxes,
)
from .rng import Rng, default_seed
from .tensor import GradTape, Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "GradTape", "Rng", "Tensor", "add", "as_tensor", "batchnorm1d", "channel_matmul",
    "concat", "conv1d", "default_seed", "global_avg_pool_time", "grad_check",
    "grad_enabled", "index", "linear", "matmul", "mean", "mean_pool_vars", "mse_loss",
    "mul", "no_grad", "numerical_grad", "ops", "relu", "reshape", "sigmoid", "silu",
    "square", "sub", "swapaxes",
]
