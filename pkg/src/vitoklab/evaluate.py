"""Run a trained model over a corpus and score its reconstructions."""

from __future__ import annotations

import numpy as np

from .metrics import frechet_proxy, psnr, ssim, to_unit
from .model.config import ModelConfig
from .model.vitok import ParamStore, reconstruct
from .numerics import no_grad

METRICS = ("psnr", "ssim", "frechet_proxy")


def reconstruct_array(cfg: ModelConfig, params: ParamStore, data: np.ndarray, batch_size: int = 32,
                      quantize: str = "full", l_eval: int | None = None) -> np.ndarray:
    """Zero-noise reconstructions of ``data`` (n, T, H, W, 3), batched."""
    out = []
    with no_grad():
        for i in range(0, len(data), batch_size):
            X_hat, _ = reconstruct(data[i : i + batch_size], cfg, params, l_eval=l_eval, quantize=quantize)
            out.append(X_hat.data)
    return np.concatenate(out)


def score(recon: np.ndarray, data: np.ndarray, metrics=METRICS) -> tuple[list[dict], dict]:
    """Per-item rows and an aggregate row. PSNR/SSIM are computed on [0, 1] pixels."""
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    a, b = to_unit(recon), to_unit(data)
    rows = []
    for i in range(len(data)):
        row = {"item": i}
        if "psnr" in metrics:
            row["psnr"] = psnr(a[i], b[i])
        if "ssim" in metrics:
            row["ssim"] = ssim(a[i], b[i])
        rows.append(row)
    agg: dict = {"item": "mean"}
    if "psnr" in metrics:
        # aggregate PSNR from the pooled MSE, not the mean of per-item dB values
        agg["psnr"] = psnr(a, b)
    if "ssim" in metrics:
        agg["ssim"] = float(np.mean([r["ssim"] for r in rows]))
    if "frechet_proxy" in metrics:
        agg["frechet_proxy"] = frechet_proxy(recon, data) if len(data) >= 2 else float("nan")
    return rows, agg


def evaluate(cfg: ModelConfig, params: ParamStore, data: np.ndarray, metrics=METRICS,
             quantize: str = "full", l_eval: int | None = None) -> dict:
    _, agg = score(reconstruct_array(cfg, params, data, quantize=quantize, l_eval=l_eval), data, metrics)
    agg.pop("item")
    return agg
