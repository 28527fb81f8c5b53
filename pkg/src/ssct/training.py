"""Self-supervised training of the FBP filter and the denoiser.

The loss for one sinogram ``y`` and mask ``J`` is

    masked_mse(radon(denoise(fbp(perturb(y, J)))), y, J)

and both the half-spectrum filter and the network weights are updated by one
Adam optimizer.  Three modes share the loop: fitting a single sinogram from
scratch, training on a stream of simulated sinograms, and fine-tuning a
dataset-trained checkpoint on one sinogram.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from . import denoiser as dn
from .autodiff import AdamState, adam_step
from .fbp import fbp, ramp_init
from .masking import MaskPartition, generate_mask, masked_mse, perturb
from .phantoms import noisy_sinogram
from .tomo import Geometry, Sinogram, apply_circle, radon

SELF_SUPERVISED = "self_supervised"
LEARNED_SINGLE_SHOT = "learned_single_shot"
LEARNED_SELF_SUPERVISED = "learned_self_supervised"
MODES = (SELF_SUPERVISED, LEARNED_SINGLE_SHOT, LEARNED_SELF_SUPERVISED)

_MODE_DEFAULTS = {
    SELF_SUPERVISED: dict(iterations=4000, learning_rate=0.01, batch_size=1),
    LEARNED_SINGLE_SHOT: dict(iterations=10000, learning_rate=0.01, batch_size=8),
    # a fresh Adam state moves every trained weight by about lr on its first step;
    # 0.01 throws a trained checkpoint off and fine-tuning rarely recovers
    LEARNED_SELF_SUPERVISED: dict(iterations=1000, learning_rate=0.001, batch_size=1),
}

ProgressFn = Callable[[int, float], None]


@dataclass
class TrainConfig:
    mode: str = SELF_SUPERVISED
    iterations: int = 4000
    learning_rate: float = 0.01
    batch_size: int = 1
    mask_stride: int = 4
    seed: int = 0
    noise_sigma_rel: float = 0.02
    n_views: int = 32
    image_size: int = 128
    channels: int = 32
    layers: int = 5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "TrainConfig":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        return cls(mode=mode, **{**_MODE_DEFAULTS[mode], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Checkpoint:
    phi: torch.Tensor
    denoiser: dn.DenoiserParams
    config: TrainConfig
    geometry: Geometry
    loss_history: list[float] = field(default_factory=list)

    def clone(self) -> "Checkpoint":
        return Checkpoint(
            self.phi.detach().clone(),
            self.denoiser.clone(requires_grad=False),
            replace(self.config),
            self.geometry,
            list(self.loss_history),
        )


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; ``checkpoint`` holds the best finite state."""

    def __init__(self, iteration: int, checkpoint: Checkpoint):
        super().__init__(f"loss became non-finite at iteration {iteration}; best finite checkpoint preserved")
        self.iteration = iteration
        self.checkpoint = checkpoint


def initial_checkpoint(config: TrainConfig, geometry: Geometry) -> Checkpoint:
    return Checkpoint(
        ramp_init(geometry.n_bins, trainable=False),
        dn.init_denoiser(config.seed, channels=config.channels, layers=config.layers).clone(requires_grad=False),
        config,
        geometry,
    )


def ss_loss(
    y: torch.Tensor, phi: torch.Tensor, params: dn.DenoiserParams, mask: MaskPartition, geometry: Geometry
) -> torch.Tensor:
    y_jc = perturb(y, mask)
    x0 = fbp(y_jc, phi, geometry)
    x = dn.forward(params, x0)
    return masked_mse(radon(x, geometry), y, mask)


def self_supervised_step(
    y: torch.Tensor, phi: torch.Tensor, params: dn.DenoiserParams, mask: MaskPartition, geometry: Geometry
) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Loss and its gradients with respect to ``[phi] + params.tensors()``."""
    leaves = [phi, *params.tensors()]
    loss = ss_loss(y, phi, params, mask, geometry)
    grads = torch.autograd.grad(loss, leaves)
    return loss.detach(), list(grads)


def _fit(
    start: Checkpoint,
    config: TrainConfig,
    batches: Callable[[int], torch.Tensor],
    progress: ProgressFn | None,
) -> Checkpoint:
    geometry = start.geometry
    phi = start.phi.detach().clone().requires_grad_(True)
    params = start.denoiser.clone(requires_grad=True)
    leaves = [phi, *params.tensors()]
    state = AdamState()
    history: list[float] = []
    best_loss = math.inf
    best = (phi.detach().clone(), params.clone(requires_grad=False))

    def snapshot() -> Checkpoint:
        return Checkpoint(best[0].clone(), best[1].clone(requires_grad=False), config, geometry, list(history))

    for it in range(config.iterations):
        mask = generate_mask(geometry, config.mask_stride, it % config.mask_stride, config.seed)
        loss, grads = self_supervised_step(batches(it), phi, params, mask, geometry)
        value = float(loss)
        if not math.isfinite(value):
            raise TrainingDiverged(it, snapshot())
        history.append(value)
        if progress is not None:
            progress(it, value)
        if value < best_loss:
            best_loss = value
            best = (phi.detach().clone(), params.clone(requires_grad=False))
        adam_step(leaves, grads, state, config.learning_rate)
    if config.iterations == 0:
        return Checkpoint(start.phi.detach().clone(), start.denoiser.clone(False), config, geometry, [])
    return snapshot()


def _check_sinogram(y: Sinogram, config: TrainConfig) -> None:
    if not torch.isfinite(y.data).all():
        raise ValueError("sinogram contains non-finite values")
    g = y.geometry
    if (g.image_size, g.n_views) != (config.image_size, config.n_views):
        raise ValueError(
            f"sinogram geometry {g} does not match config (image_size={config.image_size}, n_views={config.n_views})"
        )


def train_single(y: Sinogram, config: TrainConfig, progress: ProgressFn | None = None) -> Checkpoint:
    """Fit filter and denoiser to one noisy sinogram from a fresh initialization."""
    if config.mode != SELF_SUPERVISED:
        raise ValueError(f"train_single needs mode {SELF_SUPERVISED!r}, got {config.mode!r}")
    _check_sinogram(y, config)
    start = initial_checkpoint(config, y.geometry)
    data = y.data.detach()
    return _fit(start, config, lambda it: data, progress)


def fine_tune(
    checkpoint: Checkpoint, y: Sinogram, config: TrainConfig, progress: ProgressFn | None = None
) -> Checkpoint:
    """Continue self-supervised training on one sinogram from ``checkpoint``."""
    if config.mode != LEARNED_SELF_SUPERVISED:
        raise ValueError(f"fine_tune needs mode {LEARNED_SELF_SUPERVISED!r}, got {config.mode!r}")
    _check_sinogram(y, config)
    _check_geometry(y.geometry, checkpoint)
    if checkpoint.denoiser.arch != dn.Architecture(layers=config.layers, channels=config.channels):
        raise ValueError("config architecture does not match the checkpoint")
    data = y.data.detach()
    return _fit(checkpoint, config, lambda it: data, progress)


class PhantomDataset:
    """Noisy sinograms of seeded ellipse phantoms, simulated on first access."""

    def __init__(self, seeds: Sequence[int], image_size: int, n_views: int, sigma_rel: float):
        self.seeds = list(seeds)
        self.image_size = image_size
        self.n_views = n_views
        self.sigma_rel = sigma_rel
        self._cache: dict[int, Sinogram] = {}

    def __len__(self) -> int:
        return len(self.seeds)

    def __getitem__(self, i: int) -> Sinogram:
        if i not in self._cache:
            _, sino = noisy_sinogram(self.seeds[i], self.image_size, self.n_views, self.sigma_rel)
            self._cache[i] = sino
        return self._cache[i]


def train_dataset(
    dataset: Sequence[Sinogram], config: TrainConfig, progress: ProgressFn | None = None
) -> Checkpoint:
    """Train on mini-batches drawn without replacement, reshuffled every epoch."""
    if config.mode != LEARNED_SINGLE_SHOT:
        raise ValueError(f"train_dataset needs mode {LEARNED_SINGLE_SHOT!r}, got {config.mode!r}")
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if n < config.batch_size:
        raise ValueError(f"dataset has {n} items, fewer than batch size {config.batch_size}")
    first = dataset[0]
    _check_sinogram(first, config)
    geometry = first.geometry
    rng = np.random.default_rng(config.seed)
    order: list[int] = []

    def batch(_: int) -> torch.Tensor:
        nonlocal order
        if len(order) < config.batch_size:
            order = rng.permutation(n).tolist()
        picked, order = order[: config.batch_size], order[config.batch_size :]
        items = [dataset[i] for i in picked]
        for s in items:
            if s.geometry != geometry:
                raise ValueError("dataset mixes geometries")
        return torch.stack([s.data.detach() for s in items])

    return _fit(initial_checkpoint(config, geometry), config, batch, progress)


def _check_geometry(geometry: Geometry, checkpoint: Checkpoint) -> None:
    if geometry != checkpoint.geometry:
        raise ValueError(f"sinogram geometry {geometry} does not match checkpoint geometry {checkpoint.geometry}")


@torch.no_grad()
def reconstruct(y: Sinogram, checkpoint: Checkpoint) -> torch.Tensor:
    """Unperturbed filtered back-projection followed by the denoiser, clamped to [0, 1]."""
    _check_geometry(y.geometry, checkpoint)
    x0 = fbp(y.data, checkpoint.phi, y.geometry)
    x = dn.forward(checkpoint.denoiser, x0)
    return apply_circle(x).clamp(0.0, 1.0)
