"""PSNR and SSIM on 8-bit RGB images."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_WIN = 11
K1, K2, L = 0.01, 0.03, 255.0


def _check(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def psnr(a, b) -> float:
    a, b = _check(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(L**2 / mse)))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")
    return out[r:-r, r:-r]


def ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    g = gaussian_window()
    if min(a.shape) < len(g):
        raise ValueError(f"images must be at least {len(g)}x{len(g)} for SSIM")
    c1, c2 = (K1 * L) ** 2, (K2 * L) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Gaussian-window SSIM over fully contained windows, channel-averaged."""
    a, b = _check(a, b)
    if a.ndim == 2:
        return ssim_channel(a, b)
    return float(np.mean([ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def evaluate(generated, ground_truth) -> dict:
    """Per-frame and mean PSNR/SSIM of two equally long image lists."""
    if len(generated) != len(ground_truth):
        raise ValueError(f"{len(generated)} generated frames vs {len(ground_truth)} ground-truth frames")
    p = [psnr(g, t) for g, t in zip(generated, ground_truth)]
    s = [ssim(g, t) for g, t in zip(generated, ground_truth)]
    return {
        "psnr": p,
        "ssim": s,
        "mean_psnr": float(np.mean(p)) if p else float("nan"),
        "mean_ssim": float(np.mean(s)) if s else float("nan"),
    }
