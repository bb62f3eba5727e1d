"""Minimal reverse-mode autodiff over numpy arrays."""

from .nn import conv2d, dropout, linear, mse_loss, relu
from .optim import Adam, AdamState, adam_step, clip_grad_norm, cosine_lr, global_norm
from .rng import RngStream, derive_seed
from .tensor import (
    ShapeError,
    Tensor,
    add,
    backward,
    channels,
    concat,
    exp,
    make_node,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    square,
    sub,
    sum,
    tanh,
)


def uniform_init(shape, fan_in: int, rng: RngStream, dtype="float32") -> Tensor:
    """Parameter drawn uniformly in +-sqrt(1/fan_in)."""
    bound = (1.0 / fan_in) ** 0.5
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


__all__ = [
    "Adam",
    "AdamState",
    "RngStream",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "channels",
    "clip_grad_norm",
    "concat",
    "cosine_lr",
    "conv2d",
    "derive_seed",
    "dropout",
    "exp",
    "global_norm",
    "linear",
    "make_node",
    "mean",
    "mse_loss",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "square",
    "sub",
    "sum",
    "tanh",
    "uniform_init",
]
