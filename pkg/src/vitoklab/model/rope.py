"""3-axis rotary position embedding.

The head width is cut into three contiguous groups, one per axis (t, y, x).
Inside a group, adjacent dims (2i, 2i+1) form a pair rotated by
``pos_axis * base ** (-2i / group_width)``.
"""

from __future__ import annotations

import numpy as np

from ..numerics import F, Tensor


def grid_positions(grid: tuple[int, int, int]) -> np.ndarray:
    """(t, y, x) for each token, temporal-major then row-major."""
    t, h, w = grid
    tt, yy, xx = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    return np.stack([tt.ravel(), yy.ravel(), xx.ravel()], axis=1)


def rope_angles(positions: np.ndarray, d_head: int, base: float = 10000.0) -> np.ndarray:
    """Angle per (token, pair), shape (L, d_head // 2)."""
    if d_head % 6:
        raise ValueError(f"head width {d_head} must be divisible by 6 for 3-axis RoPE")
    group = d_head // 3
    theta = base ** (-2.0 * np.arange(group // 2) / group)
    positions = np.asarray(positions, dtype=np.float64)
    return np.concatenate([positions[:, a : a + 1] * theta[None, :] for a in range(3)], axis=1)


def pair_swap_matrix(d: int) -> np.ndarray:
    """P with (x @ P)[2i] = -x[2i+1] and (x @ P)[2i+1] = x[2i]."""
    P = np.zeros((d, d))
    for i in range(0, d, 2):
        P[i + 1, i] = -1.0
        P[i, i + 1] = 1.0
    return P


class RopeTables:
    """Per-sequence cos/sin tables ready to broadcast against (B, heads, L, d)."""

    def __init__(self, positions: np.ndarray, d_head: int, base: float = 10000.0):
        ang = np.repeat(rope_angles(positions, d_head, base), 2, axis=1)
        self.cos = Tensor(np.cos(ang))
        self.sin = Tensor(np.sin(ang))
        self.swap = Tensor(pair_swap_matrix(d_head))
        self.d_head = d_head

    def apply(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_head:
            raise ValueError(f"expected head width {self.d_head}, got {x.shape[-1]}")
        return F.add(F.mul(x, self.cos), F.mul(F.matmul(x, self.swap), self.sin))


def rope_3d_rotate(x, positions: np.ndarray, base: float = 10000.0) -> Tensor:
    """Rotate (B, heads, L, d_head) queries or keys by their grid positions."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    return RopeTables(positions, x.shape[-1], base).apply(x)
