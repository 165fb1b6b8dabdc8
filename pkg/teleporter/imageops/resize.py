"""Nearest-neighbour and bilinear resizing for images and masks."""

from __future__ import annotations

from typing import Literal

import numpy as np
import torch
import torch.nn.functional as F

from teleporter.errors import InvalidArgumentError
from teleporter.imageops.raster import BinaryMask, ImageBuffer

Mode = Literal["nearest", "bilinear"]


def _interpolate(arr: np.ndarray, width: int, height: int, mode: Mode) -> np.ndarray:
    if width < 1 or height < 1:
        msg = f"Target size must be at least 1×1, got {width}×{height}"
        raise InvalidArgumentError(msg)
    if arr.shape[0] == height and arr.shape[1] == width:
        return arr.copy()
    tensor = torch.from_numpy(np.array(arr.transpose(2, 0, 1), copy=True))[None]
    if mode == "nearest":
        # Half-pixel centres: an integer upscale replicates each source pixel.
        out = F.interpolate(tensor, size=(height, width), mode="nearest-exact")
    else:
        out = F.interpolate(
            tensor, size=(height, width), mode="bilinear", align_corners=False
        )
    return out[0].numpy().transpose(1, 2, 0)


def resize_image(img: ImageBuffer, width: int, height: int, mode: Mode = "bilinear") -> ImageBuffer:
    out = _interpolate(img.pixels, width, height, mode)
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def resize_mask(mask: BinaryMask, width: int, height: int) -> BinaryMask:
    arr = mask.bits.astype(np.float64)[:, :, None]
    out = _interpolate(arr, width, height, "nearest")
    return BinaryMask(out[:, :, 0] > 0.5)
