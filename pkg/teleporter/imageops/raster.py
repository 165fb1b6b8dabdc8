"""Raster types (images, binary masks, boxes) and their PNG boundary."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from teleporter.errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An immutable H×W×C image with intensities in [0, 1] (C is 1 or 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            msg = f"Image must be H×W×1 or H×W×3, got shape {arr.shape}"
            raise InvalidArgumentError(msg)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            msg = f"Image must be at least 1×1, got {arr.shape[1]}×{arr.shape[0]}"
            raise InvalidArgumentError(msg)
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            msg = "Image intensities must be finite and within [0, 1]"
            raise InvalidArgumentError(msg)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def filled(cls, width: int, height: int, level: float | tuple[float, ...] = 0.0,
               channels: int = 3) -> ImageBuffer:
        arr = np.empty((height, width, channels), dtype=np.float64)
        arr[...] = level
        return cls(arr)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])

    @property
    def size(self) -> tuple[int, int]:
        """(width, height)"""
        return self.width, self.height

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """An immutable H×W mask with values exactly 0 or 1."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            msg = f"Mask must be a non-empty H×W array, got shape {arr.shape}"
            raise InvalidArgumentError(msg)
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                msg = "Mask values must be exactly 0 or 1"
                raise InvalidArgumentError(msg)
            arr = arr.astype(bool)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @classmethod
    def full(cls, width: int, height: int) -> BinaryMask:
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def empty(cls, width: int, height: int) -> BinaryMask:
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_box(cls, width: int, height: int, box: Box) -> BinaryMask:
        arr = np.zeros((height, width), dtype=bool)
        arr[box.slices] = True
        return cls(arr)

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def is_empty(self) -> bool:
        return not self.bits.any()

    def bbox(self) -> Box:
        """Tight half-open bounding box of the set pixels."""
        if self.is_empty:
            msg = "Cannot take the bounding box of an empty mask"
            raise InvalidArgumentError(msg)
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return Box(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(
            np.array_equal(self.bits, other.bits)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Box:
    """Half-open pixel region [x0, x1) × [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            msg = f"Degenerate box {self.as_tuple()}: need x0 < x1 and y0 < y1"
            raise InvalidArgumentError(msg)

    @classmethod
    def parse(cls, text: str) -> Box:
        """Parse ``x0,y0,x1,y1``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            msg = f"Box must be x0,y0,x1,y1, got {text!r}"
            raise InvalidArgumentError(msg)
        try:
            x0, y0, x1, y1 = (int(p) for p in parts)
        except ValueError as exc:
            msg = f"Box coordinates must be integers, got {text!r}"
            raise InvalidArgumentError(msg) from exc
        return cls(x0, y0, x1, y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0

    @property
    def slices(self) -> tuple[slice, slice]:
        """Row/column slices for indexing an H×W(×C) array."""
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def fits(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height

    def contains(self, other: Box) -> bool:
        return (
            self.x0 <= other.x0 and self.y0 <= other.y0
            and self.x1 >= other.x1 and self.y1 >= other.y1
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return self.x0, self.y0, self.x1, self.y1

    def __str__(self) -> str:
        return ",".join(str(v) for v in self.as_tuple())


def require_box_in_frame(box: Box, width: int, height: int) -> None:
    if not box.fits(width, height):
        msg = f"Box {box} lies outside the {width}×{height} frame"
        raise InvalidArgumentError(msg)


def require_same_size(img: ImageBuffer, mask: BinaryMask) -> None:
    if img.size != mask.size:
        msg = f"Image is {img.width}×{img.height} but mask is {mask.width}×{mask.height}"
        raise InvalidArgumentError(msg)


def hollow(img: ImageBuffer, box: Box) -> ImageBuffer:
    """Copy of ``img`` with the box interior set to 0."""
    require_box_in_frame(box, img.width, img.height)
    arr = img.pixels.copy()
    arr[box.slices] = 0.0
    return ImageBuffer(arr)


# ── PNG boundary ─────────────────────────────────────────────────


def read_image(path: str | Path) -> ImageBuffer:
    """Load an 8-bit PNG as a 3-channel image in [0, 1]."""
    file_path = Path(path).expanduser()
    if not file_path.exists():
        msg = f"File not found: {file_path}"
        raise FileNotFoundError(msg)
    with Image.open(file_path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageBuffer(arr)


def write_image(img: ImageBuffer, path: str | Path) -> Path:
    """Write ``img`` as an 8-bit PNG (RGB, or L for single-channel images)."""
    output = Path(path).expanduser()
    output.parent.mkdir(parents=True, exist_ok=True)
    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    if img.channels == 1:
        Image.fromarray(arr[:, :, 0]).save(output, format="PNG")
    else:
        Image.fromarray(arr).save(output, format="PNG")
    return output


def read_mask(path: str | Path) -> BinaryMask:
    """Load a single-channel PNG; any value above 127 is set."""
    file_path = Path(path).expanduser()
    if not file_path.exists():
        msg = f"File not found: {file_path}"
        raise FileNotFoundError(msg)
    with Image.open(file_path) as im:
        arr = np.asarray(im.convert("L"))
    return BinaryMask(arr > 127)


def write_mask(mask: BinaryMask, path: str | Path) -> Path:
    output = Path(path).expanduser()
    output.parent.mkdir(parents=True, exist_ok=True)
    arr = mask.bits.astype(np.uint8) * 255
    Image.fromarray(arr).save(output, format="PNG")
    return output
