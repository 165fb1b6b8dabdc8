"""Shape-mask simulation: coarse user-drawn silhouettes from ground-truth masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from teleporter.errors import EmptyObjectError, InvalidArgumentError
from teleporter.imageops.filters import dilate_mask, erode_mask
from teleporter.imageops.raster import BinaryMask
from teleporter.imageops.resize import resize_mask


@dataclass(frozen=True)
class ShapeSimConfig:
    box_probability: float = 0.3
    downsample_ratios: tuple[float, ...] = (1 / 2, 1 / 4, 1 / 8, 1 / 16)
    morph_iters_max: int = 5

    def __post_init__(self) -> None:
        if not 0.0 <= self.box_probability <= 1.0:
            msg = f"box_probability must be in [0, 1], got {self.box_probability}"
            raise InvalidArgumentError(msg)
        if not self.downsample_ratios:
            msg = "downsample_ratios must not be empty"
            raise InvalidArgumentError(msg)
        if any(not 0.0 < r <= 1.0 for r in self.downsample_ratios):
            msg = f"downsample ratios must lie in (0, 1], got {self.downsample_ratios}"
            raise InvalidArgumentError(msg)
        if self.morph_iters_max < 0:
            msg = f"morph_iters_max must be non-negative, got {self.morph_iters_max}"
            raise InvalidArgumentError(msg)
        object.__setattr__(self, "downsample_ratios", tuple(float(r) for r in self.downsample_ratios))


@dataclass(frozen=True)
class ShapeDraw:
    """One simulated mask and whether it came from the box branch."""

    mask: BinaryMask
    box_mode: bool


def draw_shape_mask(
    gt_mask: BinaryMask, cfg: ShapeSimConfig, rng: np.random.Generator
) -> ShapeDraw:
    if gt_mask.is_empty:
        msg = "Cannot simulate a shape mask from an empty ground-truth mask"
        raise EmptyObjectError(msg)

    bbox = gt_mask.bbox()
    box_fill = BinaryMask.from_box(gt_mask.width, gt_mask.height, bbox)
    if rng.random() < cfg.box_probability:
        return ShapeDraw(box_fill, box_mode=True)

    ratio = cfg.downsample_ratios[int(rng.integers(len(cfg.downsample_ratios)))]
    small_w = max(1, int(round(gt_mask.width * ratio)))
    small_h = max(1, int(round(gt_mask.height * ratio)))
    coarse = resize_mask(resize_mask(gt_mask, small_w, small_h), gt_mask.width, gt_mask.height)
    if coarse.is_empty:
        coarse = gt_mask

    steps = int(rng.integers(0, cfg.morph_iters_max + 1))
    for _ in range(steps):
        if rng.random() < 0.5:
            coarse = dilate_mask(coarse, 1)
        else:
            eroded = erode_mask(coarse, 1)
            # An erosion that would wipe out the silhouette is skipped.
            if not eroded.is_empty:
                coarse = eroded

    if not (coarse.bits & box_fill.bits).any():
        coarse = box_fill
    return ShapeDraw(coarse, box_mode=False)


def simulate_shape_mask(
    gt_mask: BinaryMask, cfg: ShapeSimConfig, rng: np.random.Generator
) -> BinaryMask:
    """Coarse silhouette: the filled box with ``cfg.box_probability``, else a
    downsampled-then-upsampled mask roughened by random dilation/erosion."""
    return draw_shape_mask(gt_mask, cfg, rng).mask
