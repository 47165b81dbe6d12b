"""Minimal float64 tensor engine with reverse-mode autodiff."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import avg_pool2d, conv2d, linear, softmax
from .gradcheck import grad_check
from .optim import AdamState, OneCycleSchedule, adam_step, onecycle_lr
from .rng import make_rng
from .tensor import (
    GradientError,
    ShapeError,
    Tensor,
    absolute,
    add,
    concatenate,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    sqrt,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "AdamState", "CheckpointError", "GradientError", "OneCycleSchedule", "ShapeError", "Tensor",
    "absolute", "adam_step", "add", "avg_pool2d", "concatenate", "conv2d", "div", "exp",
    "getitem", "grad_check", "linear", "load_checkpoint", "log", "make_rng", "matmul", "mean",
    "mul", "neg", "no_grad", "onecycle_lr", "power", "relu", "reshape", "save_checkpoint", "softmax",
    "sqrt", "stack", "sub", "tanh", "transpose", "tsum",
]
