"""Minimal tensor library with reverse-mode autodiff."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .module import Module, Parameter, glorot_uniform, ones, zeros
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    affine,
    backward,
    concat,
    conv1d,
    flatten,
    layer_norm,
    matmul,
    mse_loss,
    mul,
    no_grad,
    relu,
    reshape,
    softmax,
    swapaxes,
    tmean,
    tsum,
)

__all__ = [
    "Adam", "AdamState", "Module", "Parameter", "Tensor", "adam_step", "add", "affine", "backward",
    "concat", "conv1d", "finite_diff_check", "flatten", "glorot_uniform", "layer_norm",
    "load_checkpoint", "matmul", "mse_loss", "mul", "no_grad", "ones", "relu", "reshape",
    "save_checkpoint", "softmax", "swapaxes", "tmean", "tsum", "zeros",
]
