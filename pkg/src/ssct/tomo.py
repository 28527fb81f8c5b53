"""Parallel-beam Radon transform and its exact adjoint.

Ray model: each detector bin casts one ray per view; the ray is sampled at
unit spacing and every sample reads the image by bilinear interpolation.
The interpolation weights for a geometry are computed once and kept in a
sparse matrix, so that ``backproject`` is the transpose of ``radon`` to
floating-point precision.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import torch

from .autodiff import DTYPE

DENSE_LIMIT = 4096


def default_bins(image_size: int) -> int:
    n = math.ceil(math.sqrt(2.0) * image_size)
    return n + (n % 2)


@dataclass(frozen=True)
class Geometry:
    """Views uniformly spaced over [0, 2*pi), unit detector spacing."""

    image_size: int
    n_views: int
    n_bins: int = field(default=0)

    def __post_init__(self):
        if self.image_size < 1 or self.n_views < 1:
            raise ValueError(f"invalid geometry {self}")
        if self.n_bins == 0:
            object.__setattr__(self, "n_bins", default_bins(self.image_size))
        if self.n_bins < math.ceil(math.sqrt(2.0) * self.image_size):
            raise ValueError(
                f"n_bins={self.n_bins} does not cover the image diagonal "
                f"(need >= {math.ceil(math.sqrt(2.0) * self.image_size)})"
            )

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_views, dtype=np.float64) / self.n_views

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_bins)


@dataclass
class Sinogram:
    """View-major measurements ``data[view, bin]`` for a geometry."""

    data: torch.Tensor
    geometry: Geometry

    def __post_init__(self):
        if tuple(self.data.shape[-2:]) != self.geometry.sino_shape:
            raise ValueError(
                f"sinogram shape {tuple(self.data.shape)} does not match geometry {self.geometry.sino_shape}"
            )


def circle_mask(size: int) -> np.ndarray:
    """Boolean mask of the disk inscribed in a ``size`` x ``size`` grid."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[:size, :size]
    return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2


@lru_cache(maxsize=None)
def _circle_tensor(size: int) -> torch.Tensor:
    return torch.from_numpy(circle_mask(size).astype(np.float32))


def apply_circle(image: torch.Tensor) -> torch.Tensor:
    """Zero every pixel outside the inscribed circle."""
    return image * _circle_tensor(image.shape[-1])


def ray_samples(geometry: Geometry, view: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample coordinates (row, col) in pixel units for every ray of one view.

    Returns arrays of shape (n_bins, n_samples).  Pixel (r, c) has its center at
    integer coordinates; the image center sits at ((H-1)/2, (H-1)/2).
    """
    h = geometry.image_size
    nb = geometry.n_bins
    theta = geometry.angles[view]
    t = np.arange(nb) - (nb - 1) / 2.0
    s = np.arange(nb) - (nb - 1) / 2.0
    cos, sin = math.cos(theta), math.sin(theta)
    x = t[:, None] * cos - s[None, :] * sin
    y = t[:, None] * sin + s[None, :] * cos
    c = (h - 1) / 2.0
    return y + c, x + c


@lru_cache(maxsize=8)
def system_matrix(geometry: Geometry) -> sp.csr_matrix:
    """Sparse float64 matrix of shape (n_views*n_bins, H*W)."""
    h = geometry.image_size
    nb = geometry.n_bins
    rows, cols, vals = [], [], []
    for v in range(geometry.n_views):
        r, c = ray_samples(geometry, v)
        ray = np.broadcast_to((v * nb + np.arange(nb))[:, None], r.shape)
        r0 = np.floor(r).astype(np.int64)
        c0 = np.floor(c).astype(np.int64)
        fr = r - r0
        fc = c - c0
        for dr, dc, w in (
            (0, 0, (1 - fr) * (1 - fc)),
            (0, 1, (1 - fr) * fc),
            (1, 0, fr * (1 - fc)),
            (1, 1, fr * fc),
        ):
            rr = r0 + dr
            cc = c0 + dc
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < h) & (w > 0)
            rows.append(ray[ok])
            cols.append(rr[ok] * h + cc[ok])
            vals.append(w[ok])
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geometry.n_views * nb, h * h),
    ).tocsr()
    mat.sum_duplicates()
    return mat


def _to_torch_csr(mat: sp.csr_matrix, dtype: torch.dtype) -> torch.Tensor:
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Sparse CSR tensor support is in beta")
        return torch.sparse_csr_tensor(
            torch.from_numpy(mat.indptr.astype(np.int64)),
            torch.from_numpy(mat.indices.astype(np.int64)),
            torch.from_numpy(mat.data).to(dtype),
            size=mat.shape,
            check_invariants=False,
        )


@lru_cache(maxsize=8)
def _torch_operators(geometry: Geometry, dtype: torch.dtype = DTYPE) -> tuple[torch.Tensor, torch.Tensor]:
    mat = system_matrix(geometry)
    return _to_torch_csr(mat, dtype), _to_torch_csr(mat.T.tocsr(), dtype)


def _working_dtype(x: torch.Tensor) -> torch.dtype:
    # float64 passes through (used by reference checks); everything else runs in float32
    return torch.float64 if x.dtype == torch.float64 else DTYPE


def _apply(op: torch.Tensor, x: torch.Tensor, out_shape: tuple[int, ...]) -> torch.Tensor:
    lead = x.shape[: x.ndim - 2]
    flat = x.reshape(-1, x.shape[-2] * x.shape[-1]).T.contiguous()
    out = (op @ flat).T
    return out.reshape(*lead, *out_shape)


class _Radon(torch.autograd.Function):
    @staticmethod
    def forward(ctx, image, geometry):
        ctx.geometry = geometry
        fwd, _ = _torch_operators(geometry, image.dtype)
        return _apply(fwd, image, geometry.sino_shape)

    @staticmethod
    def backward(ctx, grad):
        _, adj = _torch_operators(ctx.geometry, grad.dtype)
        n = ctx.geometry.image_size
        return _apply(adj, grad, (n, n)), None


class _Backproject(torch.autograd.Function):
    @staticmethod
    def forward(ctx, sino, geometry):
        ctx.geometry = geometry
        _, adj = _torch_operators(geometry, sino.dtype)
        n = geometry.image_size
        return _apply(adj, sino, (n, n))

    @staticmethod
    def backward(ctx, grad):
        fwd, _ = _torch_operators(ctx.geometry, grad.dtype)
        return _apply(fwd, grad, ctx.geometry.sino_shape), None


def radon(image: torch.Tensor, geometry: Geometry) -> torch.Tensor:
    """Line integrals of ``image`` (..., H, W) -> sinogram (..., n_views, n_bins)."""
    n = geometry.image_size
    if tuple(image.shape[-2:]) != (n, n):
        raise ValueError(f"image shape {tuple(image.shape)} does not match geometry size {n}")
    return _Radon.apply(image.to(_working_dtype(image)), geometry)


def backproject(sino: torch.Tensor, geometry: Geometry) -> torch.Tensor:
    """Adjoint of :func:`radon`: (..., n_views, n_bins) -> (..., H, W)."""
    if tuple(sino.shape[-2:]) != geometry.sino_shape:
        raise ValueError(f"sinogram shape {tuple(sino.shape)} does not match geometry {geometry.sino_shape}")
    return _Backproject.apply(sino.to(_working_dtype(sino)), geometry)


def dense_operator(geometry: Geometry) -> np.ndarray:
    """Explicit matrix whose column j is ``radon(e_j)`` flattened."""
    n = geometry.image_size
    if n * n > DENSE_LIMIT:
        raise ValueError(f"dense operator refused for {n}x{n} images (limit {DENSE_LIMIT} pixels)")
    basis = torch.eye(n * n, dtype=DTYPE).reshape(n * n, n, n)
    with torch.no_grad():
        cols = radon(basis, geometry).reshape(n * n, -1)
    return cols.T.numpy().copy()
