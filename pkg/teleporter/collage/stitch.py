"""Collage assembly: hollow the box, stitch the object patch, add the shape channel."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from teleporter.errors import InvalidArgumentError
from teleporter.imageops.filters import DEFAULT_EROSION_RADIUS, high_frequency_map
from teleporter.imageops.raster import (
    BinaryMask,
    Box,
    ImageBuffer,
    require_box_in_frame,
    require_same_size,
)
from teleporter.imageops.resize import resize_image, resize_mask


class CollageMode(str, Enum):
    """What gets stitched into the hollowed box."""

    HF = "hf"
    NONE = "none"
    ORIGINAL = "original"
    NOISE = "noise"
    SHUFFLE = "shuffle"


SHUFFLE_PATCH = 8


@dataclass(frozen=True)
class CollageInput:
    rgb: ImageBuffer
    shape: BinaryMask
    box: Box

    @property
    def size(self) -> tuple[int, int]:
        return self.rgb.size

    def as_array(self) -> np.ndarray:
        """H×W×4 float array: RGB then the shape channel."""
        return np.concatenate(
            [self.rgb.pixels, self.shape.bits[:, :, None].astype(np.float64)], axis=2
        )


def _shuffle_patches(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = pixels.copy()
    rows = pixels.shape[0] // SHUFFLE_PATCH
    cols = pixels.shape[1] // SHUFFLE_PATCH
    if rows * cols < 2:
        return out
    p = SHUFFLE_PATCH
    blocks = [
        pixels[r * p : (r + 1) * p, c * p : (c + 1) * p] for r in range(rows) for c in range(cols)
    ]
    for k, src in enumerate(rng.permutation(len(blocks))):
        r, c = divmod(k, cols)
        out[r * p : (r + 1) * p, c * p : (c + 1) * p] = blocks[src]
    return out


def render_collage_patch(
    object_img: ImageBuffer,
    object_mask: BinaryMask,
    mode: CollageMode = CollageMode.HF,
    *,
    erosion_radius: int = DEFAULT_EROSION_RADIUS,
    rng: np.random.Generator | None = None,
) -> ImageBuffer:
    """The patch stitched into the box for each collage mode; ``hf`` is the default."""
    require_same_size(object_img, object_mask)
    mode = CollageMode(mode)
    if mode is CollageMode.HF:
        return high_frequency_map(object_img, object_mask, erosion_radius)
    if mode is CollageMode.NONE:
        return ImageBuffer(np.zeros_like(object_img.pixels))

    masked = object_img.pixels * object_mask.bits[:, :, None]
    if mode is CollageMode.ORIGINAL:
        return ImageBuffer(masked)
    if rng is None:
        msg = f"Collage mode {mode.value!r} needs a random source"
        raise InvalidArgumentError(msg)
    if mode is CollageMode.NOISE:
        noise = rng.normal(0.5, 0.25, size=masked.shape)
        return ImageBuffer(np.clip(0.5 * masked + 0.5 * noise, 0.0, 1.0) * object_mask.bits[:, :, None])
    return ImageBuffer(_shuffle_patches(masked, rng) * object_mask.bits[:, :, None])


def _shape_channel(shape_mask: BinaryMask, box: Box, width: int, height: int) -> np.ndarray:
    channel = np.zeros((height, width), dtype=bool)
    if shape_mask.size == (width, height):
        # Scene-frame mask: keep only what falls inside the box.
        channel[box.slices] = shape_mask.bits[box.slices]
    else:
        channel[box.slices] = resize_mask(shape_mask, box.width, box.height).bits
    return channel


def build_collage(
    scene: ImageBuffer,
    box: Box,
    object_hf: ImageBuffer,
    object_mask: BinaryMask,
    shape_mask: BinaryMask,
) -> CollageInput:
    """Scene with the box hollowed and the object patch stitched in, plus the shape channel.

    ``shape_mask`` is either in scene coordinates (same size as the scene) or
    box-local, in which case it is resized into the box.
    """
    if scene.channels != 3 or object_hf.channels != 3:
        msg = "Scene and object patch must both have 3 channels"
        raise InvalidArgumentError(msg)
    require_box_in_frame(box, scene.width, scene.height)
    require_same_size(object_hf, object_mask)

    rgb = scene.pixels.copy()
    region = np.zeros((box.height, box.width, 3), dtype=np.float64)
    patch = resize_image(object_hf, box.width, box.height, mode="nearest").pixels
    placed = resize_mask(object_mask, box.width, box.height).bits
    region[placed] = patch[placed]
    rgb[box.slices] = region

    shape = _shape_channel(shape_mask, box, scene.width, scene.height)
    return CollageInput(ImageBuffer(rgb), BinaryMask(shape), box)
