"""Reconstruction metrics: PSNR, windowed SSIM and a Frechet distance over proxy features.

These operate on plain arrays. Images are (..., H, W, C); callers map pixels
to [0, 1] (see ``to_unit``) and pass ``max_val=1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0
SSIM_WINDOW = 8


def to_unit(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(X_hat, X, max_val: float = 1.0) -> float:
    X_hat, X = np.asarray(X_hat, dtype=np.float64), np.asarray(X, dtype=np.float64)
    _check_same(X_hat, X)
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((X_hat - X) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(max_val**2 / mse)))


def ssim(X_hat, X, max_val: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all 8x8 windows (stride 1), channels and leading dims.

    Accepts (H, W), (H, W, C) or (..., H, W, C).
    """
    a, b = np.asarray(X_hat, dtype=np.float64), np.asarray(X, dtype=np.float64)
    _check_same(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    H, W = a.shape[-3], a.shape[-2]
    if H < window or W < window:
        raise ValueError(f"image {H}x{W} smaller than the {window}x{window} window")
    c1, c2 = (0.01 * max_val) ** 2, (0.03 * max_val) ** 2
    axes = (a.ndim - 3, a.ndim - 2)

    def wmean(x):
        return sliding_window_view(x, (window, window), axis=axes).mean(axis=(-1, -2))

    mu_a, mu_b = wmean(a), wmean(b)
    var_a = wmean(a * a) - mu_a**2
    var_b = wmean(b * b) - mu_b**2
    cov = wmean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("feature statistics need at least 2 samples")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise ValueError("covariance is not symmetric")

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError(f"need (n >= 2, d) features, got {feats.shape}")
        mu = feats.mean(axis=0)
        centered = feats - mu
        cov = centered.T @ centered / (feats.shape[0] - 1)
        return cls(mu, (cov + cov.T) / 2, feats.shape[0])


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of the product root is taken from the eigenvalues of the
    symmetric matrix S_a^(1/2) S_b S_a^(1/2), negatives clamped to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    for s in (a, b):
        if not (np.isfinite(s.mean).all() and np.isfinite(s.cov).all()):
            raise ValueError("non-finite feature statistics")
    root_a = _psd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_root = float(np.sqrt(np.clip(eig, 0, None)).sum())
    diff = a.mean - b.mean
    d = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * tr_root)
    return max(d, 0.0)


def feature_stats(images, proxy_net_seed: int = 0) -> FeatureStats:
    """Stats of pooled proxy-pyramid features (the same net the perceptual loss uses)."""
    from .losses import feature_net

    images = np.asarray(images)
    if images.ndim == 5:
        images = images.reshape((-1,) + images.shape[2:])
    if len(images) < 2:
        raise ValueError("feature_stats needs at least 2 images")
    return FeatureStats.from_features(feature_net(proxy_net_seed).pooled(images))


def frechet_proxy(X_hat, X, proxy_net_seed: int = 0) -> float:
    return frechet_distance(feature_stats(X_hat, proxy_net_seed), feature_stats(X, proxy_net_seed))
