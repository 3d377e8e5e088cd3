"""PSNR and windowed SSIM for images in [0, 1]."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 100.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10·log10(1/MSE) with MAX=1, capped at 100 dB for near-identical pairs."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(n=_SSIM_WINDOW, sigma=_SSIM_SIGMA):
    x = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(a, b, win):
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    var_a = convolve2d(a * a, win, mode="valid") - mu_a ** 2
    var_b = convolve2d(b * b, win, mode="valid") - mu_b ** 2
    cov = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean SSIM with an 11×11 Gaussian window (sigma 1.5), channels averaged."""
    a, b = _check_pair(a, b)
    win = _gaussian_window()
    if a.ndim == 2:
        return _ssim_channel(a, b, win)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], win) for c in range(a.shape[-1])]))
