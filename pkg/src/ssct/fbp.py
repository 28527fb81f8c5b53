"""Frequency-domain sinogram filtering and filtered back-projection with a
trainable filter."""
from __future__ import annotations

import math

import numpy as np
import torch

from .autodiff import DTYPE
from .tomo import Geometry, apply_circle, backproject


def padded_length(n_bins: int) -> int:
    """Next power of two >= 2 * n_bins."""
    return 1 << math.ceil(math.log2(2 * n_bins))


def n_freq(n_bins: int) -> int:
    return padded_length(n_bins) // 2 + 1


def ramp_kernel(length: int) -> np.ndarray:
    """Band-limited discrete ramp kernel, laid out circularly over ``length`` taps.

    ``h[0] = 1/4``, ``h[n] = -1/(pi n)^2`` for odd ``n`` and zero for even ``n != 0``.
    """
    n = np.arange(length)
    n = np.where(n < length // 2, n, n - length).astype(np.float64)
    h = np.zeros(length)
    h[n == 0] = 0.25
    odd = (n.astype(np.int64) % 2) != 0
    h[odd] = -1.0 / (np.pi * n[odd]) ** 2
    return h


def ramp_init(n_bins: int, trainable: bool = True) -> torch.Tensor:
    """Ram-Lak half-spectrum coefficients for a detector of ``n_bins`` bins."""
    if n_bins < 4:
        raise ValueError(f"n_bins must be >= 4, got {n_bins}")
    h = ramp_kernel(padded_length(n_bins))
    phi = np.fft.rfft(h).real
    return torch.tensor(phi, dtype=DTYPE, requires_grad=trainable)


def filter_sinogram(sino: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """Multiply every view's spectrum by the real filter ``phi``.

    ``phi`` holds the non-negative half of a length-P spectrum; irfft applies
    its conjugate-symmetric extension, so real input stays real.
    """
    n_bins = sino.shape[-1]
    p = padded_length(n_bins)
    if phi.shape != (p // 2 + 1,):
        raise ValueError(f"filter has {tuple(phi.shape)} coefficients, expected ({p // 2 + 1},) for {n_bins} bins")
    out_dtype = torch.promote_types(sino.dtype, phi.dtype)
    # the filter gradient sums heavily cancelling terms over views and bins;
    # float32 accumulation there costs about three digits, so this step runs in float64
    spec = torch.fft.rfft(sino.double(), n=p, dim=-1)
    return torch.fft.irfft(spec * phi.double(), n=p, dim=-1)[..., :n_bins].to(out_dtype)


def fbp_scale(n_views: int) -> float:
    # 2*pi/n_views angular step, halved because [0, 2*pi) covers every line twice
    return math.pi / n_views


def fbp(sino: torch.Tensor, phi: torch.Tensor, geometry: Geometry) -> torch.Tensor:
    """Filtered back-projection ``(..., V, B) -> (..., H, W)``, circle-masked."""
    filtered = filter_sinogram(sino.to(torch.float64 if phi.dtype == torch.float64 else DTYPE), phi)
    return apply_circle(backproject(filtered, geometry) * fbp_scale(geometry.n_views))
