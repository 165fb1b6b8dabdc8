"""Conditioning assembly shared by training and inference.

Both paths crop the object, render its collage patch, zoom into the target box
and stitch the collage in the zoomed frame, so the model sees one geometry.
"""

from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from teleporter.collage.stitch import CollageInput, CollageMode, build_collage, render_collage_patch
from teleporter.errors import InvalidArgumentError, StageError
from teleporter.imageops.filters import DEFAULT_EROSION_RADIUS, center_crop_object
from teleporter.imageops.raster import BinaryMask, Box, ImageBuffer
from teleporter.inference.zoom import DEFAULT_ZOOM_RATIO, ZoomTransform, zoom_in


@dataclass(frozen=True)
class ConditioningConfig:
    zoom_ratio: float = DEFAULT_ZOOM_RATIO
    erosion_radius: int = DEFAULT_EROSION_RADIUS
    collage_mode: CollageMode = CollageMode.HF
    remove_background: bool = True
    object_pad: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "collage_mode", CollageMode(self.collage_mode))
        if self.zoom_ratio < 1.0:
            msg = f"zoom_ratio must be at least 1, got {self.zoom_ratio}"
            raise InvalidArgumentError(msg)
        if self.erosion_radius < 0:
            msg = f"erosion_radius must be non-negative, got {self.erosion_radius}"
            raise InvalidArgumentError(msg)
        if self.object_pad < 0:
            msg = f"object_pad must be non-negative, got {self.object_pad}"
            raise InvalidArgumentError(msg)


@dataclass(frozen=True)
class Condition:
    collage: CollageInput
    object_img: ImageBuffer
    transform: ZoomTransform


@contextmanager
def stage(label: str) -> Iterator[None]:
    """Re-raise any error from the block as StageError(label, cause)."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(label, exc) from exc


def _model_shape(shape_mask: BinaryMask | None, scene: ImageBuffer, tf: ZoomTransform,
                 model_box: Box) -> BinaryMask:
    if shape_mask is None:
        return BinaryMask.from_box(tf.model_side, tf.model_side, model_box)
    if shape_mask.size == scene.size:
        return tf.crop_mask(shape_mask)
    # Box-local masks are resized into the box by build_collage.
    return shape_mask


def prepare_condition(
    object_img: ImageBuffer,
    object_mask: BinaryMask,
    scene: ImageBuffer,
    box: Box,
    shape_mask: BinaryMask | None,
    image_side: int,
    cfg: ConditioningConfig | None = None,
    rng: np.random.Generator | None = None,
) -> Condition:
    """(collage, square object crop, zoom transform) for one object/scene/box.

    A missing shape mask means the filled box. Errors carry the failing stage.
    """
    cfg = cfg or ConditioningConfig()
    with stage("crop"):
        crop_img, crop_mask = center_crop_object(
            object_img, object_mask, cfg.object_pad, zero_background=cfg.remove_background
        )
    with stage("hf-map"):
        patch = render_collage_patch(
            crop_img, crop_mask, cfg.collage_mode, erosion_radius=cfg.erosion_radius, rng=rng
        )
    with stage("zoom"):
        scene_crop, tf = zoom_in(scene, box, cfg.zoom_ratio, image_side)
        model_box = tf.box_to_model(box)
    with stage("collage"):
        shape = _model_shape(shape_mask, scene, tf, model_box)
        collage = build_collage(scene_crop, model_box, patch, crop_mask, shape)
    return Condition(collage=collage, object_img=crop_img, transform=tf)
