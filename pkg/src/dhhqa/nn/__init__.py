"""Tensor engine, optimiser and checkpoint I/O used by the quality model."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_grads, numerical_grad, relative_error
from .optim import Adam
from .tensor import (
    Tensor,
    add,
    broadcast_to,
    concat,
    dense,
    embedding_add,
    gelu,
    getitem,
    layer_norm,
    matmul,
    mean,
    mean_pool,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    softmax,
    sub,
    swapaxes,
    transpose,
    tsum,
)

__all__ = [
    "Adam", "Tensor", "check_grads", "numerical_grad", "relative_error", "add", "broadcast_to", "concat", "dense", "embedding_add",
    "gelu", "getitem", "layer_norm", "load_checkpoint", "matmul", "mean",
    "mean_pool", "mul", "no_grad", "power", "relu", "reshape", "save_checkpoint",
    "softmax", "sub", "swapaxes", "transpose", "tsum",
]
