"""Minimal dense tensors, reverse-mode gradients, Adam and TVT1 checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numerical_grad, rel_error
from .ops import (add, broadcast_to, concat, conv2d, gelu, layernorm, linear, matmul,
                  maxpool2d, mean, mse_loss, mul, relu, reshape, softmax_lastdim, sub,
                  take, transpose)
from .ops import sum as tsum
from .optim import Adam, AdamState, adam_step
from .tensor import (GradTape, Tensor, as_tensor, backward, default_dtype,
                     get_default_dtype, set_default_dtype)

__all__ = [
    "Adam", "AdamState", "GradTape", "Tensor", "adam_step", "add", "as_tensor", "backward",
    "broadcast_to", "check_gradients", "concat", "conv2d", "default_dtype", "gelu",
    "get_default_dtype", "layernorm", "linear", "load_checkpoint", "matmul", "maxpool2d",
    "mean", "mse_loss", "mul", "numerical_grad", "rel_error", "relu", "reshape",
    "save_checkpoint", "set_default_dtype", "softmax_lastdim", "sub", "take", "transpose",
    "tsum",
]
