"""Small reverse-mode autodiff engine on numpy arrays."""

from . import nn, ops
from .optim import Adam, AdamState, adam_step, lr_schedule_linear
from .tensor import Tensor, backward, is_grad_enabled, no_grad, set_debug, topo_order

__all__ = [
    "Adam",
    "AdamState",
    "Tensor",
    "adam_step",
    "backward",
    "is_grad_enabled",
    "lr_schedule_linear",
    "nn",
    "no_grad",
    "ops",
    "set_debug",
    "topo_order",
]
