"""Tensor value type, global precision/strict modes and the op registry."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised in strict mode when an op sees NaN/Inf, or by grad_check."""


_state = {"dtype": np.float32, "strict": False, "grad": True}


def get_dtype() -> type:
    return _state["dtype"]


def set_precision(name: str) -> None:
    if name not in ("float32", "float64"):
        raise ValueError(f"unknown precision {name!r}")
    _state["dtype"] = np.float32 if name == "float32" else np.float64


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    old = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = old


def set_strict(flag: bool) -> None:
    _state["strict"] = bool(flag)


@contextlib.contextmanager
def strict(flag: bool = True) -> Iterator[None]:
    old = _state["strict"]
    _state["strict"] = flag
    try:
        yield
    finally:
        _state["strict"] = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def grad_enabled() -> bool:
    return _state["grad"]


@dataclass(eq=False)
class Node:
    """One recorded op: kind, its inputs and the vector-Jacobian product."""

    kind: str
    inputs: tuple["Tensor", ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    attrs: dict = field(default_factory=dict)


class Tensor:
    """Dense n-d array with an optional link to the op that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 1000  # make ndarray <op> Tensor dispatch to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _state["dtype"]:
            arr = arr.astype(_state["dtype"])
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar; all routes go through forward_op ----------------
    def __add__(self, other):
        return forward_op("add", [self, as_tensor(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return forward_op("sub", [self, as_tensor(other)])

    def __rsub__(self, other):
        return forward_op("sub", [as_tensor(other), self])

    def __mul__(self, other):
        return forward_op("mul", [self, as_tensor(other)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        return forward_op("div", [self, as_tensor(other)])

    def __rtruediv__(self, other):
        return forward_op("div", [as_tensor(other), self])

    def __neg__(self):
        return forward_op("neg", [self])

    def __matmul__(self, other):
        return forward_op("matmul", [self, as_tensor(other)])

    def __getitem__(self, index):
        return forward_op("slice", [self], index=index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward_op("reshape", [self], shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return forward_op("transpose", [self], axes=axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return forward_op("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return forward_op("mean", [self], axis=axis, keepdims=keepdims)

    def exp(self):
        return forward_op("exp", [self])

    def log(self):
        return forward_op("log", [self])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# kind -> fn(arrays, **attrs) -> (out, vjp)
_REGISTRY: dict[str, Callable] = {}


def register(kind: str):
    def deco(fn):
        _REGISTRY[kind] = fn
        return fn

    return deco


def op_kinds() -> list[str]:
    return sorted(_REGISTRY)


def forward_op(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Run op ``kind`` on ``inputs`` and record it on the tape when needed."""
    try:
        fn = _REGISTRY[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    inputs = tuple(as_tensor(t) for t in inputs)
    arrays = [t.data for t in inputs]
    if _state["strict"]:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NonFiniteError(f"non-finite input to {kind}")
    out_data, vjp = fn(arrays, **attrs)
    out = Tensor(out_data)
    if _state["grad"] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(kind, inputs, vjp, attrs)
    return out
