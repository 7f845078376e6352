"""Tape-based reverse-mode autodiff over numpy arrays."""

from . import ops as F
from .autograd import Graph, backward, grad, grad_check
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    forward_op,
    get_dtype,
    grad_enabled,
    no_grad,
    op_kinds,
    precision,
    set_precision,
    set_strict,
    strict,
)

__all__ = [
    "F",
    "Graph",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "forward_op",
    "get_dtype",
    "grad",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "op_kinds",
    "precision",
    "set_precision",
    "set_strict",
    "strict",
]
