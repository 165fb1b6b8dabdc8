"""High-frequency map kernels: grayscale, Sobel, erosion, object centring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from teleporter.errors import EmptyObjectError, InvalidArgumentError
from teleporter.imageops.raster import BinaryMask, ImageBuffer, require_same_size

DEFAULT_EROSION_RADIUS = 2

_STRUCTURE = np.ones((3, 3), dtype=bool)


def _default_horizontal() -> np.ndarray:
    return np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class SobelKernels:
    """Horizontal and vertical 3×3 Sobel stencils."""

    horizontal: np.ndarray = field(default_factory=_default_horizontal)
    vertical: np.ndarray | None = None

    def __post_init__(self) -> None:
        h = np.asarray(self.horizontal, dtype=np.float64)
        v = h.T.copy() if self.vertical is None else np.asarray(self.vertical, dtype=np.float64)
        if h.shape != (3, 3) or v.shape != (3, 3):
            msg = "Sobel stencils must be 3×3"
            raise InvalidArgumentError(msg)
        if h.sum() != 0.0 or v.sum() != 0.0:
            msg = "Sobel stencils must sum to zero"
            raise InvalidArgumentError(msg)
        if not np.array_equal(v, h.T):
            msg = "Vertical stencil must be the transpose of the horizontal one"
            raise InvalidArgumentError(msg)
        h.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "horizontal", h)
        object.__setattr__(self, "vertical", v)


SOBEL = SobelKernels()


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """Rec.601 luma, 0.299 R + 0.587 G + 0.114 B."""
    if img.channels != 3:
        msg = f"to_grayscale needs a 3-channel image, got {img.channels}"
        raise InvalidArgumentError(msg)
    r, g, b = (img.pixels[:, :, c] for c in range(3))
    # Rewritten around B so equal channels map to themselves exactly.
    gray = b + 0.299 * (r - b) + 0.587 * (g - b)
    return ImageBuffer(np.clip(gray, 0.0, 1.0))


def sobel_response(gray: ImageBuffer, kernels: SobelKernels = SOBEL) -> ImageBuffer:
    """|gray ⊗ K_h| + |gray ⊗ K_v|, clamped to [0, 1]; edges replicate."""
    if gray.channels != 1:
        msg = f"sobel_response needs a single-channel image, got {gray.channels}"
        raise InvalidArgumentError(msg)
    plane = gray.pixels[:, :, 0]
    gx = ndimage.convolve(plane, kernels.horizontal, mode="nearest")
    gy = ndimage.convolve(plane, kernels.vertical, mode="nearest")
    return ImageBuffer(np.clip(np.abs(gx) + np.abs(gy), 0.0, 1.0))


def erode_mask(mask: BinaryMask, radius: int) -> BinaryMask:
    """``radius`` passes of 3×3 erosion; pixels outside the frame count as 0."""
    if radius < 0:
        msg = f"Erosion radius must be non-negative, got {radius}"
        raise InvalidArgumentError(msg)
    if radius == 0:
        return mask
    # scipy treats iterations=0 as "until stable", hence the early return above.
    bits = ndimage.binary_erosion(
        mask.bits, structure=_STRUCTURE, iterations=radius, border_value=0
    )
    return BinaryMask(bits)


def dilate_mask(mask: BinaryMask, radius: int) -> BinaryMask:
    if radius < 0:
        msg = f"Dilation radius must be non-negative, got {radius}"
        raise InvalidArgumentError(msg)
    if radius == 0:
        return mask
    bits = ndimage.binary_dilation(mask.bits, structure=_STRUCTURE, iterations=radius)
    return BinaryMask(bits)


def high_frequency_map(
    img: ImageBuffer, mask: BinaryMask, erosion_radius: int = DEFAULT_EROSION_RADIUS
) -> ImageBuffer:
    """Sobel response of the luma, times the RGB values, times the eroded mask."""
    if img.channels != 3:
        msg = f"high_frequency_map needs a 3-channel image, got {img.channels}"
        raise InvalidArgumentError(msg)
    require_same_size(img, mask)
    response = sobel_response(to_grayscale(img)).pixels
    eroded = erode_mask(mask, erosion_radius).bits[:, :, None]
    return ImageBuffer(response * img.pixels * eroded)


def center_crop_object(
    img: ImageBuffer,
    mask: BinaryMask,
    pad_fraction: float = 0.0,
    *,
    zero_background: bool = True,
) -> tuple[ImageBuffer, BinaryMask]:
    """Square crop around the object, background zeroed.

    The side is ``(1 + pad_fraction) * max(bbox width, bbox height)``. A window
    larger than the frame is clamped to it and the result zero-padded back to a
    square, so the object stays centred.
    """
    require_same_size(img, mask)
    if mask.is_empty:
        msg = "Object mask is empty"
        raise EmptyObjectError(msg)
    if pad_fraction < 0:
        msg = f"pad_fraction must be non-negative, got {pad_fraction}"
        raise InvalidArgumentError(msg)

    box = mask.bbox()
    side = max(1, int(round((1.0 + pad_fraction) * max(box.width, box.height))))
    win_w = min(side, img.width)
    win_h = min(side, img.height)
    x0 = min(max(box.x0 + (box.width - win_w) // 2, 0), img.width - win_w)
    y0 = min(max(box.y0 + (box.height - win_h) // 2, 0), img.height - win_h)

    pixels = img.pixels[y0 : y0 + win_h, x0 : x0 + win_w]
    bits = mask.bits[y0 : y0 + win_h, x0 : x0 + win_w]
    if zero_background:
        pixels = pixels * bits[:, :, None]

    square = max(win_w, win_h)
    if win_w != win_h:
        top = (square - win_h) // 2
        left = (square - win_w) // 2
        pad = ((top, square - win_h - top), (left, square - win_w - left))
        pixels = np.pad(pixels, (*pad, (0, 0)))
        bits = np.pad(bits, pad)
    return ImageBuffer(pixels), BinaryMask(bits)
