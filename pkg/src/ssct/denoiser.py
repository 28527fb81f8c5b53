"""Residual convolutional denoiser used as the image-domain network."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .autodiff import DTYPE, conv2d, leaky_relu


@dataclass(frozen=True)
class Architecture:
    layers: int = 5
    channels: int = 32
    kernel: int = 3
    slope: float = 0.1

    def shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """(kernel shape, bias shape) for every conv layer."""
        out = []
        for i in range(self.layers):
            c_in = 1 if i == 0 else self.channels
            c_out = 1 if i == self.layers - 1 else self.channels
            out.append(((c_out, c_in, self.kernel, self.kernel), (c_out,)))
        return out

    def n_params(self) -> int:
        return sum(math.prod(w) + math.prod(b) for w, b in self.shapes())


@dataclass
class DenoiserParams:
    arch: Architecture
    weights: list[torch.Tensor]
    biases: list[torch.Tensor]

    def tensors(self) -> list[torch.Tensor]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    def n_params(self) -> int:
        return sum(t.numel() for t in self.tensors())

    def clone(self, requires_grad: bool = True) -> "DenoiserParams":
        def cp(t):
            return t.detach().clone().requires_grad_(requires_grad)

        return DenoiserParams(self.arch, [cp(w) for w in self.weights], [cp(b) for b in self.biases])


def init_denoiser(seed: int, channels: int = 32, layers: int = 5, kernel: int = 3, slope: float = 0.1) -> DenoiserParams:
    """He-uniform hidden layers, zero output layer (so the network starts as identity)."""
    if layers < 2:
        raise ValueError(f"need at least 2 layers, got {layers}")
    arch = Architecture(layers=layers, channels=channels, kernel=kernel, slope=slope)
    gen = torch.Generator().manual_seed(seed)
    weights, biases = [], []
    for i, (w_shape, b_shape) in enumerate(arch.shapes()):
        if i == layers - 1:
            w = torch.zeros(w_shape, dtype=DTYPE)
        else:
            fan_in = w_shape[1] * kernel * kernel
            bound = math.sqrt(6.0 / fan_in)
            w = (torch.rand(w_shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound
        weights.append(w.requires_grad_(True))
        biases.append(torch.zeros(b_shape, dtype=DTYPE, requires_grad=True))
    return DenoiserParams(arch, weights, biases)


def forward(params: DenoiserParams, image: torch.Tensor) -> torch.Tensor:
    """Apply ``x + residual(x)``.  Accepts (H, W), (N, H, W) or (N, 1, H, W)."""
    squeeze = image.ndim
    if image.ndim == 2:
        x = image[None, None]
    elif image.ndim == 3:
        x = image[:, None]
    elif image.ndim == 4 and image.shape[1] == 1:
        x = image
    else:
        raise ValueError(f"denoiser expects a single-channel image, got shape {tuple(image.shape)}")
    h = x
    last = params.arch.layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = conv2d(h, w, b)
        if i < last:
            h = leaky_relu(h, params.arch.slope)
    out = x + h
    if squeeze == 2:
        return out[0, 0]
    if squeeze == 3:
        return out[:, 0]
    return out
