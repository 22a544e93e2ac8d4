"""Minimal reverse-mode autodiff engine used by the desmoking model."""

from ulw.autodiff.tensor import (
    Graph,
    Tensor,
    active_graph,
    backward,
    debug_checks_enabled,
    no_grad,
    set_debug_checks,
)
from ulw.autodiff.ops import (
    add,
    broadcast_to_channels,
    concat_channels,
    conv2d,
    conv_transpose2d,
    div,
    max_pool2d,
    mul,
    reduce_mean,
    relu,
    sigmoid,
    softplus,
    square,
    sub,
)
from ulw.autodiff.gradcheck import GradCheckReport, grad_check

__all__ = [
    "Graph",
    "GradCheckReport",
    "Tensor",
    "active_graph",
    "add",
    "backward",
    "broadcast_to_channels",
    "concat_channels",
    "conv2d",
    "conv_transpose2d",
    "debug_checks_enabled",
    "div",
    "grad_check",
    "max_pool2d",
    "mul",
    "no_grad",
    "reduce_mean",
    "relu",
    "sigmoid",
    "softplus",
    "square",
    "sub",
]
