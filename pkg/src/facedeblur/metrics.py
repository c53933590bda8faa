"""PSNR and single-scale SSIM on RGB images in [0, 1].

Both metrics compute in float64 regardless of the input dtype. PSNR of
identical images returns ``math.inf`` as the sentinel. SSIM follows the
standard recipe: 11x11 Gaussian window with sigma 1.5, K1 = 0.01,
K2 = 0.03, dynamic range 1, averaged over valid window positions (no
padding) and then over channels.
"""

from __future__ import annotations

import math

import numpy as np
import torch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _to_image(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x, dtype=np.float64)
    if arr.min() < -1e-6 or arr.max() > 1 + 1e-6:
        raise ValueError(
            f"image values must lie in [0, 1], got range [{arr.min():g}, {arr.max():g}]")
    return arr


def psnr(pred, gt) -> float:
    """10 * log10(1 / MSE); identical inputs give math.inf."""
    a = _to_image(pred)
    b = _to_image(gt)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


def _channel_ssim(x: np.ndarray, y: np.ndarray, window: np.ndarray,
                  c1: float, c2: float) -> float:
    size = window.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(x, (size, size))
    win_y = np.lib.stride_tricks.sliding_window_view(y, (size, size))
    mu_x = np.einsum("ijkl,kl->ij", win, window)
    mu_y = np.einsum("ijkl,kl->ij", win_y, window)
    xx = np.einsum("ijkl,kl->ij", win * win, window)
    yy = np.einsum("ijkl,kl->ij", win_y * win_y, window)
    xy = np.einsum("ijkl,kl->ij", win * win_y, window)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(pred, gt) -> float:
    """Mean structural similarity over valid window positions and channels."""
    a = _to_image(pred)
    b = _to_image(gt)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError(f"images must be (C, H, W) or (H, W), got {a.shape}")
    _, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    window = gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    return float(np.mean([_channel_ssim(a[c], b[c], window, c1, c2) for c in range(a.shape[0])]))
