"""Zoom-in crop around the target box and the inverse paste-back."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from teleporter.errors import InvalidArgumentError
from teleporter.imageops.raster import BinaryMask, Box, ImageBuffer, require_box_in_frame
from teleporter.imageops.resize import resize_image, resize_mask

DEFAULT_ZOOM_RATIO = 2.0


@dataclass(frozen=True)
class ZoomTransform:
    """Scene square ↔ model_side × model_side frame."""

    square: Box
    model_side: int

    def __post_init__(self) -> None:
        if self.square.width != self.square.height:
            msg = f"Zoom region must be square, got {self.square.width}×{self.square.height}"
            raise InvalidArgumentError(msg)
        if self.model_side < 1:
            msg = f"model_side must be positive, got {self.model_side}"
            raise InvalidArgumentError(msg)

    @property
    def scale(self) -> float:
        """Model pixels per scene pixel."""
        return self.model_side / self.square.width

    def to_model(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.square.x0) * self.scale, (y - self.square.y0) * self.scale

    def to_scene(self, u: float, v: float) -> tuple[float, float]:
        return u / self.scale + self.square.x0, v / self.scale + self.square.y0

    def box_to_model(self, box: Box) -> Box:
        """Smallest model-frame box covering ``box``, clipped to the model frame."""
        u0, v0 = self.to_model(box.x0, box.y0)
        u1, v1 = self.to_model(box.x1, box.y1)
        side = self.model_side
        x0 = min(max(int(math.floor(u0 + 1e-9)), 0), side - 1)
        y0 = min(max(int(math.floor(v0 + 1e-9)), 0), side - 1)
        x1 = max(min(int(math.ceil(u1 - 1e-9)), side), x0 + 1)
        y1 = max(min(int(math.ceil(v1 - 1e-9)), side), y0 + 1)
        return Box(x0, y0, x1, y1)

    def crop_mask(self, mask: BinaryMask) -> BinaryMask:
        """Scene-frame mask → model frame (nearest)."""
        return resize_mask(
            BinaryMask(mask.bits[self.square.slices]), self.model_side, self.model_side
        )


def zoom_square(box: Box, width: int, height: int, ratio: float = DEFAULT_ZOOM_RATIO) -> Box:
    """Square of side ratio·max(box sides) centred on the box, shifted into the frame.

    The square shrinks only when the frame's shorter side is smaller than it.
    """
    require_box_in_frame(box, width, height)
    if ratio < 1.0:
        msg = f"Zoom ratio must be at least 1, got {ratio}"
        raise InvalidArgumentError(msg)
    side = int(round(ratio * max(box.width, box.height)))
    side = max(1, min(side, width, height))
    cx, cy = box.center
    x0 = int(math.floor(cx - side / 2.0))
    y0 = int(math.floor(cy - side / 2.0))
    x0 = min(max(x0, 0), width - side)
    y0 = min(max(y0, 0), height - side)
    return Box(x0, y0, x0 + side, y0 + side)


def zoom_in(
    scene: ImageBuffer, box: Box, ratio: float = DEFAULT_ZOOM_RATIO, model_side: int = 64
) -> tuple[ImageBuffer, ZoomTransform]:
    square = zoom_square(box, scene.width, scene.height, ratio)
    tf = ZoomTransform(square, model_side)
    crop = ImageBuffer(scene.pixels[square.slices])
    return resize_image(crop, model_side, model_side), tf


def _feather_weights(side: int, feather: int) -> np.ndarray:
    ramp = np.minimum(np.arange(side) + 1, np.arange(side)[::-1] + 1) / float(feather + 1)
    ramp = np.clip(ramp, 0.0, 1.0)
    return np.minimum(ramp[:, None], ramp[None, :])[:, :, None]


def paste_back(
    result: ImageBuffer, tf: ZoomTransform, scene: ImageBuffer, *, feather: int = 0
) -> ImageBuffer:
    """Resize ``result`` onto the transform's square of ``scene``; nothing outside changes.

    ``feather`` > 0 blends the outer ``feather`` pixels of the square with the scene.
    """
    if result.size != (tf.model_side, tf.model_side):
        msg = (
            f"Result is {result.width}×{result.height}, transform expects "
            f"{tf.model_side}×{tf.model_side}"
        )
        raise InvalidArgumentError(msg)
    if not tf.square.fits(scene.width, scene.height):
        msg = f"Zoom square {tf.square} does not fit the {scene.width}×{scene.height} scene"
        raise InvalidArgumentError(msg)
    if result.channels != scene.channels:
        msg = f"Result has {result.channels} channels, scene has {scene.channels}"
        raise InvalidArgumentError(msg)
    if feather < 0:
        msg = f"feather must be non-negative, got {feather}"
        raise InvalidArgumentError(msg)

    side = tf.square.width
    patch = resize_image(result, side, side).pixels
    if feather:
        weights = _feather_weights(side, feather)
        patch = weights * patch + (1.0 - weights) * scene.pixels[tf.square.slices]
    out = scene.pixels.copy()
    out[tf.square.slices] = patch
    return ImageBuffer(np.clip(out, 0.0, 1.0))
