"""Shared synthetic fixtures: a moving textured square over a smooth background."""

from __future__ import annotations

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from teleporter.datapipe.pairs import ClipFrame
from teleporter.diffusion.model import DenoiserConfig, DenoiserModel, build_model
from teleporter.imageops.raster import BinaryMask, ImageBuffer, write_image, write_mask

SIDE = 32
SQUARE = 10
INSTANCE = "square"
SQUARE_POSITIONS = ((4, 4), (12, 8), (18, 16))

TINY_CONFIG_TEXT = """\
# tiny model for tests
image_side = 16
base_width = 8
stages = 2
heads = 2
context_width = 8
backbone_width = 8
backbone_side = 16
backbone_patch = 4
timesteps = 100
boundary = 50
sampler_steps = 2
"""


def background(side: int = SIDE, tint: float = 0.0) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    return np.stack(
        [0.2 + 0.3 * xx, 0.3 + 0.2 * yy, np.full_like(xx, 0.4 + tint)], axis=2
    )


def square_frame(
    x0: int, y0: int, size: int = SQUARE, side: int = SIDE, tint: float = 0.0
) -> tuple[ImageBuffer, BinaryMask]:
    """Smooth background with a checkered square at (x0, y0)."""
    pixels = background(side, tint)
    yy, xx = np.mgrid[0:size, 0:size]
    checker = ((yy // 2 + xx // 2) % 2).astype(np.float64)
    pixels[y0 : y0 + size, x0 : x0 + size] = np.stack(
        [0.6 + 0.3 * checker, 0.2 + 0.1 * checker, 0.1 + 0.2 * (1 - checker)], axis=2
    )
    mask = np.zeros((side, side), dtype=bool)
    mask[y0 : y0 + size, x0 : x0 + size] = True
    return ImageBuffer(pixels), BinaryMask(mask)


@pytest.fixture
def moving_square_clip() -> list[ClipFrame]:
    frames = []
    for x0, y0 in SQUARE_POSITIONS:
        image, mask = square_frame(x0, y0)
        frames.append(ClipFrame(image, {INSTANCE: mask}))
    return frames


@pytest.fixture
def tiny_config() -> DenoiserConfig:
    return DenoiserConfig(
        image_side=16,
        latent_factor=2,
        base_width=8,
        stages=2,
        heads=2,
        context_width=8,
        backbone_width=8,
        backbone_side=16,
        backbone_patch=4,
    )


@pytest.fixture
def tiny_model(tiny_config: DenoiserConfig) -> DenoiserModel:
    return build_model(tiny_config, seed=0)


DatasetWriter = Callable[..., Path]


@pytest.fixture
def write_dataset(tmp_path: Path) -> DatasetWriter:
    """Write ``clips/<name>/<n>.png`` and ``stills/<name>.png`` with masks under a root."""

    def _write(
        root_name: str = "data",
        clip_frames: int = 2,
        stills: int = 0,
        empty_mask_stills: tuple[int, ...] = (),
    ) -> Path:
        root = tmp_path / root_name
        if clip_frames:
            clip_dir = root / "clips" / INSTANCE
            for n, (x0, y0) in enumerate(SQUARE_POSITIONS[:clip_frames]):
                image, mask = square_frame(x0, y0)
                write_image(image, clip_dir / f"{n}.png")
                write_mask(mask, clip_dir / f"{n}.mask.png")
        for k in range(stills):
            x0, y0 = 2 + (k * 3) % 18, 3 + (k * 5) % 17
            image, mask = square_frame(x0, y0, tint=(k % 7) / 20)
            if k in empty_mask_stills:
                mask = BinaryMask.empty(SIDE, SIDE)
            write_image(image, root / "stills" / f"still{k:03d}.png")
            write_mask(mask, root / "stills" / f"still{k:03d}.mask.png")
        return root

    return _write


@pytest.fixture
def tiny_config_file(tmp_path: Path) -> Callable[..., Path]:
    def _write(extra: str = "") -> Path:
        path = tmp_path / "run.cfg"
        path.write_text(TINY_CONFIG_TEXT + extra, encoding="utf-8")
        return path

    return _write
