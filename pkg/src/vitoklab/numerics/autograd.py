"""Reverse-mode differentiation over the recorded tape, plus a finite-difference checker."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import NonFiniteError, Node, ShapeError, Tensor, get_dtype


class Graph:
    """Topologically ordered op nodes reachable from ``output``.

    Inputs of a node always appear before the node itself, so walking
    ``nodes`` backwards visits each op once with its full upstream gradient.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Node] = []
        self.node_outputs: list[Tensor] = []
        self.leaves: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; recursion depth would scale with model depth
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.nodes.append(t.node)
                self.node_outputs.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t.node is None:
                if t.requires_grad:
                    self.leaves.append(t)
                continue
            stack.append((t, True))
            for parent in reversed(t.node.inputs):
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))


def backward(
    graph: Graph | Tensor,
    seed: np.ndarray | Tensor | None = None,
    leaves: Iterable[Tensor] | None = None,
) -> dict[Tensor, np.ndarray]:
    """Propagate ``seed`` back through ``graph``.

    Returns a map from leaf tensor to gradient. Every tensor in ``leaves``
    gets an entry; leaves the output does not depend on get zeros. The
    gradients are also stored on ``leaf.grad``.
    """
    if isinstance(graph, Tensor):
        graph = Graph(graph)
    out = graph.output
    if seed is None:
        seed = np.ones_like(out.data)
    seed = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=out.data.dtype)
    if seed.shape != out.shape:
        raise ShapeError(f"seed shape {seed.shape} does not match output {out.shape}")

    grads: dict[int, np.ndarray] = {id(out): seed}
    for node, node_out in zip(reversed(graph.nodes), reversed(graph.node_outputs)):
        g = grads.pop(id(node_out), None)
        if g is None:
            continue
        in_grads = node.vjp(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            k = id(t)
            grads[k] = grads[k] + gi if k in grads else gi

    wanted = list(leaves) if leaves is not None else graph.leaves
    result: dict[Tensor, np.ndarray] = {}
    for leaf in wanted:
        g = grads.get(id(leaf))
        if g is None:
            g = seed if leaf is out else np.zeros_like(leaf.data)
        g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
        leaf.grad = g
        result[leaf] = g
    return result


def grad(f_out: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    g = backward(f_out, leaves=leaves)
    return [g[t] for t in leaves]


def grad_check(
    f: Callable[..., Tensor],
    point: Sequence[Tensor],
    h: float = 1e-4,
    samples: int | None = None,
    seed: int = 0,
) -> float:
    """Max over checked coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f(*point)`` must return a scalar tensor. With ``samples`` set, at most
    that many randomly chosen coordinates of each tensor are probed; this keeps
    the check tractable for whole-model losses.
    """
    if get_dtype() != np.float64:
        raise RuntimeError("grad_check requires float64 precision mode")
    point = list(point)
    for p in point:
        p.requires_grad = True
        p.data = np.ascontiguousarray(p.data)
    out = f(*point)
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NonFiniteError("f is non-finite at the base point")
    analytic = backward(out, leaves=point)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in point:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if samples is not None and flat.size > samples:
            idx = rng.choice(flat.size, size=samples, replace=False)
        a_flat = analytic[p].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*point).item()
            flat[i] = orig - h
            fm = f(*point).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"f is non-finite near coordinate {i} of {p!r}")
            num = (fp - fm) / (2 * h)
            err = abs(a_flat[i] - num) / max(1.0, abs(a_flat[i]))
            worst = max(worst, err)
    return worst
