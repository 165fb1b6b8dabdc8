"""Vision backbones that turn an object crop into a global token plus patch tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
import torch
from torch import nn

from teleporter.errors import InvalidArgumentError
from teleporter.imageops.raster import ImageBuffer
from teleporter.imageops.resize import resize_image


@runtime_checkable
class Backbone(Protocol):
    side: int
    patch: int
    width: int

    def __call__(self, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 3, side, side) in [0, 1] → (B, 1, width), (B, N_p, width)."""
        ...


class ToyBackbone(nn.Module):
    """Deterministic stand-in: per-patch channel mean/std mixed by a fixed seeded matrix.

    Patches are non-overlapping and emitted row-major, so permuting input
    patches permutes the patch tokens the same way.
    """

    STATS = 6

    def __init__(self, side: int = 64, patch: int = 8, width: int = 32, seed: int = 0) -> None:
        super().__init__()
        if side < 1 or patch < 1 or side % patch:
            msg = f"Backbone side {side} must be a positive multiple of patch {patch}"
            raise InvalidArgumentError(msg)
        if width < 1:
            msg = f"Backbone width must be positive, got {width}"
            raise InvalidArgumentError(msg)
        self.side = side
        self.patch = patch
        self.width = width
        generator = torch.Generator().manual_seed(seed)
        mixing = torch.randn(self.STATS, width, generator=generator, dtype=torch.float64)
        self.register_buffer("mixing", mixing / math.sqrt(self.STATS))

    @property
    def num_patches(self) -> int:
        return (self.side // self.patch) ** 2

    @staticmethod
    def _stats(values: torch.Tensor) -> torch.Tensor:
        return torch.cat([values.mean(-1), values.std(-1, correction=0)], dim=-1)

    def forward(self, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, c, h, w = pixels.shape
        if c != 3 or h != self.side or w != self.side:
            msg = f"Expected (B, 3, {self.side}, {self.side}) input, got {tuple(pixels.shape)}"
            raise InvalidArgumentError(msg)
        p, g = self.patch, self.side // self.patch
        patches = (
            pixels.reshape(b, 3, g, p, g, p).permute(0, 2, 4, 1, 3, 5).reshape(b, g * g, 3, p * p)
        )
        mixing = self.mixing.to(pixels.dtype)
        patch_tokens = self._stats(patches) @ mixing
        global_token = self._stats(pixels.reshape(b, 1, 3, h * w)) @ mixing
        return global_token, patch_tokens


class Dinov2Backbone(nn.Module):
    """Pretrained DINOv2 through torch.hub; ViT-g/14 gives 1536-wide tokens."""

    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, variant: str = "dinov2_vitg14", side: int = 224) -> None:
        super().__init__()
        self.model = torch.hub.load("facebookresearch/dinov2", variant)
        self.model.eval().requires_grad_(False)
        self.side = side
        self.patch = 14
        self.width = int(self.model.embed_dim)
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))

    def forward(self, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = (pixels.float() - self.mean) / self.std
        features = self.model.forward_features(x)
        return features["x_norm_clstoken"][:, None], features["x_norm_patchtokens"]


@dataclass(frozen=True, eq=False)
class BackboneOutput:
    global_token: torch.Tensor
    patch_tokens: torch.Tensor

    def __post_init__(self) -> None:
        g, p = self.global_token, self.patch_tokens
        if g.ndim != 2 or g.shape[0] != 1 or p.ndim != 2 or p.shape[1] != g.shape[1]:
            msg = f"Expected 1×D and N×D tokens, got {tuple(g.shape)} and {tuple(p.shape)}"
            raise InvalidArgumentError(msg)
        if not (torch.isfinite(g).all() and torch.isfinite(p).all()):
            msg = "Backbone produced non-finite tokens"
            raise InvalidArgumentError(msg)

    @property
    def width(self) -> int:
        return int(self.global_token.shape[1])

    @property
    def num_patches(self) -> int:
        return int(self.patch_tokens.shape[0])


def image_tensor(img: ImageBuffer) -> torch.Tensor:
    """H×W×C image → (C, H, W) float64 tensor."""
    return torch.from_numpy(np.array(img.pixels.transpose(2, 0, 1), copy=True))


def extract_tokens(object_img: ImageBuffer, backbone: Backbone) -> BackboneOutput:
    """Resize the (background-removed) square crop to the backbone side and encode it."""
    if object_img.width != object_img.height:
        msg = f"Object crop must be square, got {object_img.width}×{object_img.height}"
        raise InvalidArgumentError(msg)
    if object_img.channels != 3:
        msg = f"Object crop must have 3 channels, got {object_img.channels}"
        raise InvalidArgumentError(msg)
    resized = resize_image(object_img, backbone.side, backbone.side)
    with torch.no_grad():
        global_token, patch_tokens = backbone(image_tensor(resized)[None])
    return BackboneOutput(global_token[0], patch_tokens[0])
