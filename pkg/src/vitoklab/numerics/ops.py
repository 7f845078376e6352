"""Differentiable op kernels and their functional wrappers.

Elementwise binary ops follow numpy broadcasting; anything numpy would reject
raises ShapeError. Gradients of broadcast operands are summed back to the
operand shape.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, forward_op, register


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: np.ndarray, b: np.ndarray, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast {a.shape} with {b.shape}") from None


def _same_shape(a: np.ndarray, b: np.ndarray, kind: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes differ {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- binary


@register("add")
def _add(xs):
    a, b = xs
    _broadcast_shape(a, b, "add")
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@register("sub")
def _sub(xs):
    a, b = xs
    _broadcast_shape(a, b, "sub")
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@register("mul")
def _mul(xs):
    a, b = xs
    _broadcast_shape(a, b, "mul")
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@register("div")
def _div(xs):
    a, b = xs
    _broadcast_shape(a, b, "div")
    out = a / b
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


@register("matmul")
def _matmul(xs):
    a, b = xs
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}") from None

    def vjp(g):
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return a @ b, vjp


@register("square_error")
def _square_error(xs):
    a, b = xs
    _same_shape(a, b, "square_error")
    d = a - b
    return d * d, lambda g: (2 * g * d, -2 * g * d)


@register("abs_error")
def _abs_error(xs):
    a, b = xs
    _same_shape(a, b, "abs_error")
    d = a - b
    s = np.sign(d)
    return np.abs(d), lambda g: (g * s, -g * s)


# ----------------------------------------------------------------- unary


@register("neg")
def _neg(xs):
    return -xs[0], lambda g: (-g,)


@register("exp")
def _exp(xs):
    out = np.exp(xs[0])
    return out, lambda g: (g * out,)


@register("expm1")
def _expm1(xs):
    out = np.expm1(xs[0])
    return out, lambda g: (g * (out + 1.0),)


@register("log")
def _log(xs):
    x = xs[0]
    return np.log(x), lambda g: (g / x,)


@register("sqrt")
def _sqrt(xs):
    out = np.sqrt(xs[0])
    return out, lambda g: (g * 0.5 / out,)


@register("square")
def _square(xs):
    x = xs[0]
    return x * x, lambda g: (2 * g * x,)


@register("abs")
def _abs(xs):
    x = xs[0]
    return np.abs(x), lambda g: (g * np.sign(x),)


@register("sigmoid")
def _sigmoid(xs):
    out = 0.5 * (1 + np.tanh(0.5 * xs[0]))
    return out, lambda g: (g * out * (1 - out),)


@register("tanh")
def _tanh(xs):
    out = np.tanh(xs[0])
    return out, lambda g: (g * (1 - out * out),)


@register("silu")
def _silu(xs):
    x = xs[0]
    s = 0.5 * (1 + np.tanh(0.5 * x))
    return x * s, lambda g: (g * (s + x * s * (1 - s)),)


@register("softplus")
def _softplus(xs):
    x = xs[0]
    s = 0.5 * (1 + np.tanh(0.5 * x))
    return np.logaddexp(0, x).astype(x.dtype), lambda g: (g * s,)


@register("leaky_relu")
def _leaky_relu(xs, slope=0.2):
    x = xs[0]
    k = np.where(x > 0, 1, slope).astype(x.dtype)
    return x * k, lambda g: (g * k,)


@register("clip")
def _clip(xs, lo=None, hi=None):
    x = xs[0]
    out = np.clip(x, lo, hi)
    inside = out == x
    return out, lambda g: (g * inside,)


# ----------------------------------------------------------- structural


@register("reshape")
def _reshape(xs, shape):
    x = xs[0]
    try:
        out = x.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None
    return out, lambda g: (g.reshape(x.shape),)


@register("transpose")
def _transpose(xs, axes=None):
    x = xs[0]
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"bad transpose axes {axes} for ndim {x.ndim}")
    inv = tuple(np.argsort(axes))
    return np.transpose(x, axes), lambda g: (np.transpose(g, inv),)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is None or p is Ellipsis for p in parts)


@register("slice")
def _slice(xs, index):
    x = xs[0]
    try:
        out = x[index]
    except IndexError as exc:
        raise ShapeError(f"slice {index!r} invalid for shape {x.shape}: {exc}") from None
    basic = _is_basic_index(index)

    def vjp(g):
        gx = np.zeros_like(x)
        if basic:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return np.array(out, copy=True), vjp


@register("concat")
def _concat(xs, axis=0):
    if not xs:
        raise ShapeError("concat of nothing")
    ref = xs[0]
    ax = axis % ref.ndim
    for a in xs[1:]:
        if a.ndim != ref.ndim or any(a.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat shapes incompatible on axis {axis}: {ref.shape} vs {a.shape}")
    splits = np.cumsum([a.shape[ax] for a in xs])[:-1]
    return np.concatenate(xs, axis=ax), lambda g: tuple(np.split(g, splits, axis=ax))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = tuple(sorted(a % ndim for a in axis))
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated reduction axis {axis}")
    return out


@register("sum")
def _sum(xs, axis=None, keepdims=False):
    x = xs[0]
    axes = _norm_axes(axis, x.ndim)
    out = x.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return np.asarray(out, dtype=x.dtype), vjp


@register("mean")
def _mean(xs, axis=None, keepdims=False):
    x = xs[0]
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return np.asarray(out, dtype=x.dtype), vjp


# ------------------------------------------------------------ composite


@register("softmax")
def _softmax(xs, axis=-1):
    # No max subtraction here; callers stabilise the logits themselves.
    e = np.exp(xs[0])
    y = e / e.sum(axis=axis, keepdims=True)
    return y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


@register("rms_norm")
def _rms_norm(xs, eps=1e-6):
    x, w = xs
    if w.shape != (x.shape[-1],):
        raise ShapeError(f"rms_norm weight {w.shape} does not match width {x.shape[-1]}")
    r = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
    n = x * r

    def vjp(g):
        gn = g * w
        gx = r * (gn - n * (gn * n).mean(axis=-1, keepdims=True))
        gw = (g * n).reshape(-1, x.shape[-1]).sum(axis=0)
        return gx, gw

    return n * w, vjp


# ----------------------------------------------------- functional names


def add(a, b):
    return forward_op("add", [a, b])


def sub(a, b):
    return forward_op("sub", [a, b])


def mul(a, b):
    return forward_op("mul", [a, b])


def div(a, b):
    return forward_op("div", [a, b])


def matmul(a, b):
    return forward_op("matmul", [a, b])


def neg(x):
    return forward_op("neg", [x])


def exp(x):
    return forward_op("exp", [x])


def expm1(x):
    """exp(x) - 1 without cancellation near zero."""
    return forward_op("expm1", [x])


def log(x):
    return forward_op("log", [x])


def sqrt(x):
    return forward_op("sqrt", [x])


def square(x):
    return forward_op("square", [x])


def abs(x):  # noqa: A001 - mirrors numpy naming
    return forward_op("abs", [x])


def sigmoid(x):
    return forward_op("sigmoid", [x])


def tanh(x):
    return forward_op("tanh", [x])


def silu(x):
    return forward_op("silu", [x])


def softplus(x):
    return forward_op("softplus", [x])


def leaky_relu(x, slope: float = 0.2):
    return forward_op("leaky_relu", [x], slope=slope)


def clip(x, lo=None, hi=None):
    return forward_op("clip", [x], lo=lo, hi=hi)


def reshape(x, shape):
    return forward_op("reshape", [x], shape=tuple(shape))


def transpose(x, axes=None):
    return forward_op("transpose", [x], axes=None if axes is None else tuple(axes))


def concat(xs, axis: int = 0):
    return forward_op("concat", list(xs), axis=axis)


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001
    return forward_op("sum", [x], axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims: bool = False):
    return forward_op("mean", [x], axis=axis, keepdims=keepdims)


def softmax(x, axis: int = -1):
    return forward_op("softmax", [x], axis=axis)


def stable_softmax(x, axis: int = -1):
    """Softmax with the row max subtracted as a constant first."""
    x = as_tensor(x)
    return softmax(x - Tensor(x.data.max(axis=axis, keepdims=True)), axis=axis)


def rms_norm(x, weight, eps: float = 1e-6):
    return forward_op("rms_norm", [x, weight], eps=eps)


def square_error(a, b):
    return forward_op("square_error", [a, b])


def abs_error(a, b):
    return forward_op("abs_error", [a, b])
