from __future__ import annotations

import numpy as np
import pytest

from teleporter.collage.shape import ShapeSimConfig, draw_shape_mask, simulate_shape_mask
from teleporter.collage.stitch import CollageMode, build_collage, render_collage_patch
from teleporter.errors import EmptyObjectError, InvalidArgumentError
from teleporter.imageops.filters import high_frequency_map
from teleporter.imageops.raster import BinaryMask, Box, ImageBuffer

from conftest import square_frame


def _blob_mask() -> BinaryMask:
    bits = np.zeros((48, 48), dtype=bool)
    yy, xx = np.mgrid[0:48, 0:48]
    bits[(yy - 24) ** 2 + (xx - 20) ** 2 < 100] = True
    return BinaryMask(bits)


def test_box_branch_frequency():
    rng = np.random.default_rng(7)
    cfg = ShapeSimConfig()
    mask = _blob_mask()
    hits = sum(draw_shape_mask(mask, cfg, rng).box_mode for _ in range(10_000))
    assert abs(hits / 10_000 - 0.30) <= 0.02


def test_identity_configuration_reproduces_the_mask():
    cfg = ShapeSimConfig(box_probability=0.0, downsample_ratios=(1.0,), morph_iters_max=0)
    mask = _blob_mask()
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert simulate_shape_mask(mask, cfg, rng) == mask


def test_identical_seeds_give_identical_shape_masks():
    mask = _blob_mask()
    cfg = ShapeSimConfig(box_probability=0.2)
    first = [simulate_shape_mask(mask, cfg, np.random.default_rng(s)) for s in range(12)]
    again = [simulate_shape_mask(mask, cfg, np.random.default_rng(s)) for s in range(12)]
    assert first == again
    assert len({m.bits.tobytes() for m in first}) > 1


def test_shape_masks_are_never_empty():
    rng = np.random.default_rng(3)
    tiny = np.zeros((40, 40), dtype=bool)
    tiny[10, 30] = True
    for mask in (BinaryMask(tiny), _blob_mask()):
        for _ in range(500):
            assert not simulate_shape_mask(mask, ShapeSimConfig(), rng).is_empty


def test_box_mode_fills_the_bounding_box():
    mask = _blob_mask()
    out = simulate_shape_mask(mask, ShapeSimConfig(box_probability=1.0), np.random.default_rng(0))
    assert out == BinaryMask.from_box(48, 48, mask.bbox())


def test_shape_config_validation_and_empty_input():
    with pytest.raises(InvalidArgumentError):
        ShapeSimConfig(box_probability=1.5)
    with pytest.raises(InvalidArgumentError):
        ShapeSimConfig(downsample_ratios=())
    with pytest.raises(EmptyObjectError):
        simulate_shape_mask(BinaryMask.empty(4, 4), ShapeSimConfig(), np.random.default_rng(0))


def test_build_collage_stitches_inside_the_box_only():
    scene, _ = square_frame(2, 2)
    obj, obj_mask = square_frame(0, 0, side=10)
    hf = high_frequency_map(obj, obj_mask, 0)
    box = Box(12, 14, 22, 24)
    collage = build_collage(scene, box, hf, obj_mask, BinaryMask.from_box(32, 32, box))

    outside = np.ones((32, 32), dtype=bool)
    outside[box.slices] = False
    assert np.array_equal(collage.rgb.pixels[outside], scene.pixels[outside])
    assert np.array_equal(collage.rgb.pixels[box.slices], hf.pixels)
    assert collage.shape == BinaryMask.from_box(32, 32, box)
    assert collage.as_array().shape == (32, 32, 4)


def test_shape_channel_is_clipped_to_the_box():
    scene = ImageBuffer.filled(16, 16, 0.5)
    patch = ImageBuffer.filled(4, 4, 0.2)
    box = Box(4, 4, 8, 8)
    collage = build_collage(scene, box, patch, BinaryMask.full(4, 4), BinaryMask.full(16, 16))
    assert collage.shape == BinaryMask.from_box(16, 16, box)

    local = BinaryMask(np.array([[1, 0], [0, 1]]))
    collage = build_collage(scene, box, patch, BinaryMask.full(4, 4), local)
    assert collage.shape.count == 8
    assert collage.shape.bits[4:6, 4:6].all()


def test_build_collage_validates_inputs():
    scene = ImageBuffer.filled(8, 8, 0.5)
    patch = ImageBuffer.filled(4, 4, 0.2)
    with pytest.raises(InvalidArgumentError):
        build_collage(scene, Box(6, 6, 10, 10), patch, BinaryMask.full(4, 4), BinaryMask.full(8, 8))
    with pytest.raises(InvalidArgumentError):
        build_collage(scene, Box(0, 0, 4, 4), patch, BinaryMask.full(3, 3), BinaryMask.full(8, 8))


@pytest.mark.parametrize("mode", list(CollageMode))
def test_collage_patch_modes_stay_on_the_object(mode):
    obj, mask = square_frame(4, 4, size=8, side=16)
    patch = render_collage_patch(obj, mask, mode, rng=np.random.default_rng(0))
    assert patch.size == obj.size
    assert not patch.pixels[~mask.bits].any()
    if mode is CollageMode.NONE:
        assert not patch.pixels.any()


def test_stochastic_collage_modes_need_a_random_source():
    obj, mask = square_frame(4, 4, size=8, side=16)
    with pytest.raises(InvalidArgumentError):
        render_collage_patch(obj, mask, CollageMode.NOISE)
