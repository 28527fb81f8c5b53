"""Random-ellipse phantoms and noisy sparse-view sinogram simulation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import torch

from .tomo import Geometry, Sinogram, radon

MIN_SIZE = 32
# ellipse support stays inside this radius (fraction of H); the circle is 0.5
SUPPORT_RADIUS = 0.48


@dataclass(frozen=True)
class Ellipse:
    """Center and semi-axes in units of the image width, centered coordinates."""

    cx: float
    cy: float
    a: float
    b: float
    rotation: float
    intensity: float


@dataclass(frozen=True)
class EllipsePhantomSpec:
    seed: int
    ellipses: tuple[Ellipse, ...]

    @classmethod
    def from_seed(cls, seed: int) -> "EllipsePhantomSpec":
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 13))
        ellipses = []
        for i in range(n):
            if i == 0:
                # large positive body ellipse, otherwise most phantoms clamp to near-empty
                a, b = rng.uniform(0.3, 0.4, size=2)
                val = rng.uniform(0.2, 0.4)
            else:
                a, b = rng.uniform(0.05, 0.4, size=2)
                val = rng.uniform(-0.4, 0.4)
            rot = rng.uniform(0.0, math.pi)
            r_max = SUPPORT_RADIUS - max(a, b)
            r = r_max * math.sqrt(rng.uniform())
            ang = rng.uniform(0.0, 2.0 * math.pi)
            ellipses.append(Ellipse(r * math.cos(ang), r * math.sin(ang), a, b, rot, val))
        return cls(seed, tuple(ellipses))


def rasterize(ellipses: Iterable[Ellipse], size: int) -> np.ndarray:
    """Sum of ellipse indicators times intensity, clamped to [0, 1], float32."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    u = (xx - c) / size
    v = (yy - c) / size
    img = np.zeros((size, size))
    for e in ellipses:
        du, dv = u - e.cx, v - e.cy
        cos, sin = math.cos(e.rotation), math.sin(e.rotation)
        p = (du * cos + dv * sin) / e.a
        q = (-du * sin + dv * cos) / e.b
        img += np.where(p * p + q * q <= 1.0, e.intensity, 0.0)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def gen_phantom(spec: EllipsePhantomSpec | int, size: int) -> torch.Tensor:
    if size < MIN_SIZE:
        raise ValueError(f"phantom size must be >= {MIN_SIZE}, got {size}")
    if not isinstance(spec, EllipsePhantomSpec):
        spec = EllipsePhantomSpec.from_seed(spec)
    return torch.from_numpy(rasterize(spec.ellipses, size))


def simulate(
    image: torch.Tensor,
    n_views: int,
    sigma_rel: float,
    seed: int,
    n_bins: int = 0,
) -> Sinogram:
    """Radon transform plus AWGN with std ``sigma_rel * max(clean sinogram)``."""
    if sigma_rel < 0:
        raise ValueError(f"sigma_rel must be >= 0, got {sigma_rel}")
    geometry = Geometry(image.shape[-1], n_views, n_bins)
    with torch.no_grad():
        clean = radon(image, geometry)
    if sigma_rel == 0:
        return Sinogram(clean, geometry)
    sigma = sigma_rel * float(clean.max())
    noise = np.random.default_rng(seed).standard_normal(geometry.sino_shape)
    return Sinogram(clean + torch.from_numpy((sigma * noise).astype(np.float32)), geometry)


def split(seeds: Iterable[int], train_fraction: float) -> tuple[list[int], list[int]]:
    """Deterministic train/test split: the first ``round(n * fraction)`` sorted seeds train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    ordered = sorted(set(seeds))
    n_train = round(len(ordered) * train_fraction)
    if n_train == 0 or n_train == len(ordered):
        raise ValueError(f"fraction {train_fraction} leaves one side of a {len(ordered)}-seed split empty")
    return ordered[:n_train], ordered[n_train:]


def noisy_sinogram(seed: int, size: int, n_views: int, sigma_rel: float) -> tuple[torch.Tensor, Sinogram]:
    """Phantom for ``seed`` and its noisy sinogram; the noise stream is keyed off the phantom seed."""
    x = gen_phantom(seed, size)
    return x, simulate(x, n_views, sigma_rel, noise_seed(seed))


def noise_seed(phantom_seed: int) -> int:
    return 1_000_003 + int(phantom_seed)

