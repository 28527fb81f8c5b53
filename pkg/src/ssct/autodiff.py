"""Differentiable primitives and the optimizer used by the training loop.

Tensors are ``torch.Tensor`` objects in float32; the reverse-mode tape is
torch's autograd graph.  This module pins down the few semantics the rest of
the package relies on (shape checks, the leaky-ReLU kink convention and the
Adam update) so that they are tested in one place.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F

DTYPE = torch.float32


def conv2d(input: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Same-size 2-D cross-correlation with zero padding.

    Parameters
    ----------
    input : (N, I, H, W) tensor
    kernel : (O, I, K, K) tensor, K odd
    bias : (O,) tensor or None
    """
    if input.ndim != 4 or kernel.ndim != 4:
        raise ValueError(
            f"conv2d expects NCHW input and OIKK kernel, got {tuple(input.shape)} and {tuple(kernel.shape)}"
        )
    k_h, k_w = kernel.shape[-2:]
    if k_h != k_w or k_h % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {k_h}x{k_w}")
    if input.shape[1] != kernel.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input has {input.shape[1]} channels, kernel expects {kernel.shape[1]}"
        )
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise ValueError(f"conv2d bias must have shape ({kernel.shape[0]},), got {tuple(bias.shape)}")
    return F.conv2d(input, kernel, bias, padding=k_h // 2)


def leaky_relu(input: torch.Tensor, slope: float) -> torch.Tensor:
    """Elementwise ``max(x, slope * x)``; the derivative at 0 is 1."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    return torch.where(input >= 0, input, input * slope)


def backward(loss: torch.Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires it."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


@torch.no_grad()
def adam_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor | None],
    state: AdamState,
    lr: float,
) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place.

    A ``None`` gradient is treated as zero.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = torch.zeros_like(p)
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / corr2).sqrt_().add_(state.eps)
        p.addcdiv_(m / corr1, denom, value=-lr)
