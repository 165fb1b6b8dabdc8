"""Image ↔ latent adapters."""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import torch
import torch.nn.functional as F

from teleporter.errors import InvalidArgumentError


@runtime_checkable
class LatentAdapter(Protocol):
    """Maps (B, 3, H, W) images in [0, 1] to (B, C, H/f, W/f) latents and back.

    A pretrained autoencoder can stand in here as long as it honours the
    factor and channel count.
    """

    factor: int
    channels: int

    def encode(self, images: torch.Tensor) -> torch.Tensor: ...

    def decode(self, latents: torch.Tensor) -> torch.Tensor: ...


class PoolingLatentAdapter:
    """Average-pool down by ``factor`` and rescale to [-1, 1]; nearest upsampling back."""

    channels = 3

    def __init__(self, factor: int = 2) -> None:
        if factor < 1:
            msg = f"Latent factor must be at least 1, got {factor}"
            raise InvalidArgumentError(msg)
        self.factor = factor

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            msg = f"Expected (B, 3, H, W) images, got {tuple(images.shape)}"
            raise InvalidArgumentError(msg)
        h, w = images.shape[-2:]
        if h % self.factor or w % self.factor:
            msg = f"Image dims {w}×{h} are not divisible by the latent factor {self.factor}"
            raise InvalidArgumentError(msg)
        pooled = F.avg_pool2d(images, self.factor) if self.factor > 1 else images
        return pooled * 2.0 - 1.0

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        images = (latents + 1.0) / 2.0
        if self.factor > 1:
            images = F.interpolate(images, scale_factor=self.factor, mode="nearest")
        return images.clamp(0.0, 1.0)
