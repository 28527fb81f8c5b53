"""PSNR and SSIM evaluated over the inscribed reconstruction circle."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate

from .tomo import circle_mask

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0


def _pair(reference, test) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(reference.detach() if hasattr(reference, "detach") else reference, dtype=np.float64)
    tst = np.asarray(test.detach() if hasattr(test, "detach") else test, dtype=np.float64)
    if ref.shape != tst.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {tst.shape}")
    if ref.ndim != 2 or ref.shape[0] != ref.shape[1]:
        raise ValueError(f"expected a square 2-D image, got {ref.shape}")
    return ref, tst


def psnr(reference, test, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` over the circle; ``inf`` when the images agree there."""
    ref, tst = _pair(reference, test)
    m = circle_mask(ref.shape[0])
    mse = float(np.mean((ref[m] - tst[m]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(reference, test) -> np.ndarray:
    ref, tst = _pair(reference, test)
    if ref.shape[0] < 16:
        raise ValueError(f"ssim needs images of at least 16x16, got {ref.shape}")
    w = gaussian_window()

    def filt(a):
        return correlate(a, w, mode="reflect")

    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    mu_x, mu_y = filt(ref), filt(tst)
    sxx = filt(ref * ref) - mu_x * mu_x
    syy = filt(tst * tst) - mu_y * mu_y
    sxy = filt(ref * tst) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(reference, test) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5) over the circle."""
    ref, tst = _pair(reference, test)
    s = ssim_map(ref, tst)
    return float(s[circle_mask(ref.shape[0])].mean())
