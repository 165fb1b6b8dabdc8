"""Training pairs from video clips (two frames of one instance) and from single stills."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from teleporter.collage.shape import ShapeSimConfig, simulate_shape_mask
from teleporter.datapipe.timesteps import Modality
from teleporter.errors import EmptyObjectError, InsufficientFramesError, InvalidArgumentError
from teleporter.imageops.filters import center_crop_object
from teleporter.imageops.raster import (
    BinaryMask,
    Box,
    ImageBuffer,
    hollow,
    require_box_in_frame,
    require_same_size,
)

DEFAULT_BOX_JITTER = 0.1


@dataclass(frozen=True)
class ClipFrame:
    """One pre-extracted frame with its instance masks, keyed by instance id."""

    image: ImageBuffer
    masks: Mapping[str, BinaryMask] = field(default_factory=dict)


@dataclass(frozen=True)
class TrainingPair:
    object_img: ImageBuffer
    object_mask: BinaryMask
    scene: ImageBuffer
    box: Box
    shape_mask: BinaryMask
    ground_truth: ImageBuffer
    modality: Modality

    def __post_init__(self) -> None:
        object.__setattr__(self, "modality", Modality(self.modality))
        require_same_size(self.object_img, self.object_mask)
        if self.object_mask.is_empty:
            msg = "Training pair has an empty object mask"
            raise EmptyObjectError(msg)
        gt, scene = self.ground_truth, self.scene
        if gt.pixels.shape != scene.pixels.shape:
            msg = "Scene and ground truth must share dimensions"
            raise InvalidArgumentError(msg)
        require_box_in_frame(self.box, gt.width, gt.height)
        inside = np.zeros((gt.height, gt.width), dtype=bool)
        inside[self.box.slices] = True
        if scene.pixels[inside].any() or not np.array_equal(
            scene.pixels[~inside], gt.pixels[~inside]
        ):
            msg = "Scene must equal the ground truth outside the box and be 0 inside"
            raise InvalidArgumentError(msg)


@dataclass(frozen=True)
class AugmentConfig:
    """Object-branch augmentation for still images."""

    flip_probability: float = 0.5
    max_rotation: float = 15.0
    scale_range: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_probability <= 1.0:
            msg = f"flip_probability must be in [0, 1], got {self.flip_probability}"
            raise InvalidArgumentError(msg)
        if self.max_rotation < 0:
            msg = f"max_rotation must be non-negative, got {self.max_rotation}"
            raise InvalidArgumentError(msg)
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            msg = f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}"
            raise InvalidArgumentError(msg)


IDENTITY_AUGMENT = AugmentConfig(flip_probability=0.0, max_rotation=0.0, scale_range=(1.0, 1.0))


def jitter_box(
    box: Box, width: int, height: int, rng: np.random.Generator,
    max_fraction: float = DEFAULT_BOX_JITTER,
) -> Box:
    """Grow each side by a uniform 0..max_fraction of the box extent, clamped to the frame."""
    left, top, right, bottom = rng.uniform(0.0, max_fraction, size=4)
    return Box(
        max(0, box.x0 - int(left * box.width)),
        max(0, box.y0 - int(top * box.height)),
        min(width, box.x1 + int(right * box.width)),
        min(height, box.y1 + int(bottom * box.height)),
    )


def augment_object(
    img: ImageBuffer, mask: BinaryMask, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[ImageBuffer, BinaryMask]:
    """Flip, rotate and scale the object crop about its centre."""
    flip = rng.random() < cfg.flip_probability
    angle = float(rng.uniform(-cfg.max_rotation, cfg.max_rotation)) if cfg.max_rotation else 0.0
    lo, hi = cfg.scale_range
    scale = float(rng.uniform(lo, hi)) if hi > lo else lo

    pixels = img.pixels[:, ::-1] if flip else img.pixels
    bits = mask.bits[:, ::-1] if flip else mask.bits
    if angle == 0.0 and scale == 1.0:
        return ImageBuffer(pixels), BinaryMask(bits)

    theta = np.deg2rad(angle)
    # Output → input mapping about the centre.
    matrix = np.array(
        [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    ) / scale
    centre = (np.array(bits.shape, dtype=np.float64) - 1.0) / 2.0
    offset = centre - matrix @ centre
    warped = np.stack(
        [
            ndimage.affine_transform(pixels[:, :, c], matrix, offset, order=1, mode="constant")
            for c in range(pixels.shape[2])
        ],
        axis=2,
    )
    warped_bits = ndimage.affine_transform(
        bits.astype(np.float64), matrix, offset, order=0, mode="constant"
    ) > 0.5
    if not warped_bits.any():
        return ImageBuffer(pixels), BinaryMask(bits)
    warped = np.clip(warped, 0.0, 1.0) * warped_bits[:, :, None]
    return ImageBuffer(warped), BinaryMask(warped_bits)


def sample_video_pair(
    clip: Sequence[ClipFrame],
    instance_id: str,
    rng: np.random.Generator,
    *,
    shape_cfg: ShapeSimConfig | None = None,
    box_jitter: float = DEFAULT_BOX_JITTER,
) -> TrainingPair:
    """Target object from one frame, supervision from another frame of the same instance.

    The two frames are a uniform draw over unordered distinct pairs; the earlier
    frame provides the object, the later one the scene and ground truth.
    """
    shape_cfg = shape_cfg or ShapeSimConfig()
    eligible = [
        k for k, frame in enumerate(clip)
        if instance_id in frame.masks and not frame.masks[instance_id].is_empty
    ]
    if len(eligible) < 2:
        msg = (
            f"Instance {instance_id!r} appears in {len(eligible)} frame(s); "
            "a video pair needs at least 2"
        )
        raise InsufficientFramesError(msg)

    i, j = sorted(int(k) for k in rng.choice(eligible, size=2, replace=False))
    source, target = clip[i], clip[j]
    object_img, object_mask = center_crop_object(source.image, source.masks[instance_id])

    gt = target.image
    target_mask = target.masks[instance_id]
    box = jitter_box(target_mask.bbox(), gt.width, gt.height, rng, box_jitter)
    shape_mask = simulate_shape_mask(target_mask, shape_cfg, rng)
    return TrainingPair(
        object_img=object_img,
        object_mask=object_mask,
        scene=hollow(gt, box),
        box=box,
        shape_mask=shape_mask,
        ground_truth=gt,
        modality=Modality.VIDEO,
    )


def make_image_pair(
    img: ImageBuffer,
    mask: BinaryMask,
    rng: np.random.Generator,
    *,
    augment: AugmentConfig | None = None,
    shape_cfg: ShapeSimConfig | None = None,
    box_jitter: float = DEFAULT_BOX_JITTER,
) -> TrainingPair:
    """Pair from a single still: the augmented object against the untouched image."""
    augment = augment or AugmentConfig()
    shape_cfg = shape_cfg or ShapeSimConfig()
    require_same_size(img, mask)
    if mask.is_empty:
        msg = "Object mask is empty"
        raise EmptyObjectError(msg)

    crop_img, crop_mask = center_crop_object(img, mask)
    object_img, object_mask = augment_object(crop_img, crop_mask, augment, rng)
    box = jitter_box(mask.bbox(), img.width, img.height, rng, box_jitter)
    shape_mask = simulate_shape_mask(mask, shape_cfg, rng)
    return TrainingPair(
        object_img=object_img,
        object_mask=object_mask,
        scene=hollow(img, box),
        box=box,
        shape_mask=shape_mask,
        ground_truth=img,
        modality=Modality.IMAGE,
    )
