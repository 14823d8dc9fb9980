"""Small float64 autodiff substrate used by the tagger and the attachment model."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import ParamSet, adam_step, xavier_uniform
from .tensor import (
    BCE_EPS,
    NonFiniteError,
    Tape,
    Tensor,
    add,
    as_tensor,
    bce_loss,
    concat,
    cosine,
    getitem,
    l1_norm,
    l2_norm,
    logsumexp,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scatter_add,
    sigmoid,
    stack,
    sub,
    sum_,
    take,
    tanh,
    transpose,
)

__all__ = [
    "BCE_EPS",
    "NonFiniteError",
    "ParamSet",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "bce_loss",
    "concat",
    "cosine",
    "getitem",
    "grad_check",
    "l1_norm",
    "l2_norm",
    "load_checkpoint",
    "logsumexp",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "scatter_add",
    "save_checkpoint",
    "sigmoid",
    "stack",
    "sub",
    "sum_",
    "take",
    "tanh",
    "transpose",
    "xavier_uniform",
]
