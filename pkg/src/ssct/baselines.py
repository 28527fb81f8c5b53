"""SART and SART with total-variation smoothing."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import torch

from .tomo import Geometry, Sinogram, circle_mask, system_matrix

TV_EPS = 1e-6


@dataclass(frozen=True)
class SartConfig:
    iterations: int = 20
    relaxation: float = 0.4
    tv_weight: float = 0.001
    tv_inner_steps: int = 5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 <= self.relaxation < 2.0:
            raise ValueError(f"relaxation must lie in [0, 2), got {self.relaxation}")
        if self.tv_weight < 0:
            raise ValueError(f"tv_weight must be >= 0, got {self.tv_weight}")


@lru_cache(maxsize=8)
def _view_blocks(geometry: Geometry) -> list[tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray, np.ndarray]]:
    """Per view: (A_v, A_v^T, inverse row sums, inverse column sums); zero sums map to 0."""
    mat = system_matrix(geometry)
    if mat.nnz == 0:
        raise ValueError("system matrix has no nonzero weights")
    nb = geometry.n_bins
    blocks = []
    for v in range(geometry.n_views):
        a_v = mat[v * nb : (v + 1) * nb]
        rows = np.asarray(a_v.sum(axis=1)).ravel()
        cols = np.asarray(a_v.sum(axis=0)).ravel()
        inv_r = np.divide(1.0, rows, out=np.zeros_like(rows), where=rows > 0)
        inv_c = np.divide(1.0, cols, out=np.zeros_like(cols), where=cols > 0)
        blocks.append((a_v, a_v.T.tocsr(), inv_r, inv_c))
    return blocks


def sart_sweep(x: np.ndarray, y: np.ndarray, geometry: Geometry, relaxation: float) -> np.ndarray:
    """One pass over all views in natural order; ``x`` and ``y`` are flat float64."""
    nb = geometry.n_bins
    for v, (a_v, a_vt, inv_r, inv_c) in enumerate(_view_blocks(geometry)):
        resid = (y[v * nb : (v + 1) * nb] - a_v @ x) * inv_r
        x = x + relaxation * (a_vt @ resid) * inv_c
    return x


def tv_value(image: np.ndarray, eps: float = TV_EPS) -> float:
    """Smoothed isotropic total variation with forward differences."""
    x = np.asarray(image, dtype=np.float64)
    dx = np.diff(x, axis=1, append=x[:, -1:])
    dy = np.diff(x, axis=0, append=x[-1:, :])
    return float(np.sqrt(dx * dx + dy * dy + eps).sum())


def tv_gradient(x: np.ndarray, eps: float = TV_EPS) -> np.ndarray:
    dx = np.diff(x, axis=1, append=x[:, -1:])
    dy = np.diff(x, axis=0, append=x[-1:, :])
    mag = np.sqrt(dx * dx + dy * dy + eps)
    px, py = dx / mag, dy / mag
    # adjoint of the forward differences (last difference is identically zero)
    px[:, -1] = 0.0
    py[-1, :] = 0.0
    g = -px - py
    g[:, 1:] += px[:, :-1]
    g[1:, :] += py[:-1, :]
    return g


def _run(y: Sinogram, config: SartConfig, x0: np.ndarray | None, tv_weight: float) -> torch.Tensor:
    g = y.geometry
    n = g.image_size
    circle = circle_mask(n)
    data = y.data.detach().cpu().numpy().astype(np.float64).ravel()
    x = np.zeros(n * n) if x0 is None else np.asarray(x0, dtype=np.float64).ravel().copy()
    for _ in range(config.iterations):
        x = sart_sweep(x, data, g, config.relaxation)
        img = np.maximum(x.reshape(n, n), 0.0) * circle
        if tv_weight > 0:
            for _ in range(config.tv_inner_steps):
                img = img - tv_weight * tv_gradient(img)
            img = np.maximum(img, 0.0) * circle
        x = img.ravel()
    return torch.from_numpy(x.reshape(n, n).astype(np.float32))


def sart(y: Sinogram, config: SartConfig = SartConfig(), x0: np.ndarray | None = None) -> torch.Tensor:
    """Simultaneous algebraic reconstruction from a zero (or given) start."""
    return _run(y, config, x0, 0.0)


def sart_tv(y: Sinogram, config: SartConfig = SartConfig(), x0: np.ndarray | None = None) -> torch.Tensor:
    """SART sweeps interleaved with gradient steps on smoothed total variation."""
    return _run(y, config, x0, config.tv_weight)
