"""PSNR and SSIM for slices and volumes (volumes: mean over axial slices)."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

K1, K2 = 0.01, 0.03
GAUSS_SIZE, GAUSS_SIGMA = 11, 1.5
BLOCK = 8


def _arrays(pred, gt):
    a = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    b = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(pred, gt, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _arrays(pred, gt)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def _gaussian_taps() -> np.ndarray:
    x = np.arange(GAUSS_SIZE) - GAUSS_SIZE // 2
    g = np.exp(-(x**2) / (2 * GAUSS_SIGMA**2))
    return g / g.sum()


def _local_means_gaussian(img: np.ndarray) -> np.ndarray:
    taps = _gaussian_taps()
    half = GAUSS_SIZE // 2
    out = correlate1d(correlate1d(img, taps, axis=0, mode="constant"), taps, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _local_means_block(img: np.ndarray) -> np.ndarray:
    h, w = (img.shape[0] // BLOCK) * BLOCK, (img.shape[1] // BLOCK) * BLOCK
    return img[:h, :w].reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).mean(axis=(1, 3))


def _resolve_window(shape, window: str) -> str:
    if window == "auto":
        window = "gaussian" if min(shape) >= GAUSS_SIZE else "block"
    need = GAUSS_SIZE if window == "gaussian" else BLOCK
    if window not in ("gaussian", "block"):
        raise ValueError(f"unknown SSIM window {window!r}")
    if min(shape) < need:
        raise ValueError(f"image {shape} smaller than the {need}x{need} SSIM window")
    return window


def ssim2d(a: np.ndarray, b: np.ndarray, window: str = "auto", data_range: float = 1.0) -> float:
    window = _resolve_window(a.shape, window)
    mean = _local_means_gaussian if window == "gaussian" else _local_means_block
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    mu_a, mu_b = mean(a), mean(b)
    var_a = mean(a * a) - mu_a**2
    var_b = mean(b * b) - mu_b**2
    cov = mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(pred, gt, window: str = "auto", data_range: float = 1.0) -> float:
    """Mean local SSIM; 3-D inputs ``[x, y, z]`` average over axial slices."""
    a, b = _arrays(pred, gt)
    if a.ndim == 2:
        return ssim2d(a, b, window, data_range)
    if a.ndim == 3:
        return float(np.mean([ssim2d(a[:, :, z], b[:, :, z], window, data_range)
                              for z in range(a.shape[2])]))
    raise ValueError(f"SSIM needs 2-D or 3-D input, got {a.ndim}-D")

