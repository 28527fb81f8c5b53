"""J-invariant masking in the projection domain.

A mask selects, in every view, the detector bins whose index (shifted by a
random per-view offset) falls in one residue class modulo ``stride``.  The
perturbed sinogram replaces each selected bin by the mean of its two
detector neighbours, which are never selected themselves, so the perturbed
values on J depend only on measurements outside J.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .tomo import Geometry


@dataclass(frozen=True)
class MaskPartition:
    n_views: int
    n_bins: int
    stride: int
    phase: int
    seed: int
    offsets: tuple[int, ...]

    @property
    def members(self) -> np.ndarray:
        """Boolean (n_views, n_bins) membership of J."""
        bins = np.arange(self.n_bins)[None, :]
        offs = np.asarray(self.offsets, dtype=np.int64)[:, None]
        return (bins + offs) % self.stride == self.phase

    @property
    def size(self) -> int:
        return int(self.members.sum())

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.members)


def view_offsets(n_views: int, stride: int, seed: int) -> tuple[int, ...]:
    rng = np.random.default_rng(seed)
    return tuple(int(o) for o in rng.integers(0, stride, size=n_views))


def generate_mask(geometry: Geometry, stride: int, phase: int, seed: int) -> MaskPartition:
    if not 2 <= stride <= geometry.n_bins // 2:
        raise ValueError(f"stride must lie in [2, {geometry.n_bins // 2}], got {stride}")
    if not 0 <= phase < stride:
        raise ValueError(f"phase must lie in [0, {stride}), got {phase}")
    return MaskPartition(
        n_views=geometry.n_views,
        n_bins=geometry.n_bins,
        stride=stride,
        phase=phase,
        seed=seed,
        offsets=view_offsets(geometry.n_views, stride, seed),
    )


def _neighbour_index(n_bins: int) -> tuple[torch.Tensor, torch.Tensor]:
    b = torch.arange(n_bins)
    left = torch.where(b > 0, b - 1, b + 1)
    right = torch.where(b < n_bins - 1, b + 1, b - 1)
    return left, right


def perturb(sino: torch.Tensor, mask: MaskPartition) -> torch.Tensor:
    """Return y_Jc: ``sino`` with every J bin replaced by its neighbour average.

    At the detector edges the single available neighbour is used.
    """
    if tuple(sino.shape[-2:]) != (mask.n_views, mask.n_bins):
        raise ValueError(f"sinogram shape {tuple(sino.shape)} does not match mask {(mask.n_views, mask.n_bins)}")
    left, right = _neighbour_index(mask.n_bins)
    fill = 0.5 * (sino[..., left] + sino[..., right])
    return torch.where(mask.tensor(), fill, sino)


def masked_mse(prediction: torch.Tensor, target: torch.Tensor, mask: MaskPartition) -> torch.Tensor:
    """Mean squared difference over the J bins only."""
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(prediction.shape)} vs {tuple(target.shape)}")
    members = mask.tensor()
    count = int(members.sum())
    if count == 0:
        raise ValueError("masked_mse is undefined for an empty mask")
    diff = torch.where(members, prediction - target, torch.zeros((), dtype=prediction.dtype))
    lead = prediction.numel() // members.numel()
    return (diff * diff).sum() / (count * lead)
