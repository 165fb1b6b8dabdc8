from __future__ import annotations

import numpy as np
import pytest
import torch

from teleporter.errors import InvalidArgumentError
from teleporter.idextract.backbone import BackboneOutput, ToyBackbone, extract_tokens, image_tensor
from teleporter.idextract.projector import IdProjector, IdTokens, project_id_tokens
from teleporter.imageops.raster import ImageBuffer


def _random_crop(side: int, seed: int = 0) -> ImageBuffer:
    return ImageBuffer(np.random.default_rng(seed).random((side, side, 3)))


def test_vit_sized_backbone_emits_one_token_per_patch():
    backbone = ToyBackbone(side=224, patch=14, width=1536)
    out = extract_tokens(_random_crop(224), backbone)
    assert out.global_token.shape == (1, 1536)
    assert out.patch_tokens.shape == (256, 1536)
    assert out.num_patches == backbone.num_patches == 256


def test_patch_tokens_follow_a_patch_permutation():
    side, patch = 32, 8
    grid = side // patch
    backbone = ToyBackbone(side=side, patch=patch, width=16, seed=3)
    pixels = np.random.default_rng(1).random((side, side, 3))

    order = np.random.default_rng(2).permutation(grid * grid)
    tiles = pixels.reshape(grid, patch, grid, patch, 3).transpose(0, 2, 1, 3, 4).reshape(-1, patch, patch, 3)
    shuffled = (
        tiles[order].reshape(grid, grid, patch, patch, 3).transpose(0, 2, 1, 3, 4).reshape(side, side, 3)
    )

    base = extract_tokens(ImageBuffer(pixels), backbone)
    moved = extract_tokens(ImageBuffer(shuffled), backbone)
    torch.testing.assert_close(moved.patch_tokens, base.patch_tokens[order])
    torch.testing.assert_close(moved.global_token, base.global_token)


def test_crop_is_resized_to_the_backbone_side():
    backbone = ToyBackbone(side=16, patch=4, width=8)
    out = extract_tokens(_random_crop(40), backbone)
    assert out.patch_tokens.shape == (16, 8)


def test_extraction_is_deterministic():
    crop = _random_crop(16, seed=5)
    a = extract_tokens(crop, ToyBackbone(side=16, patch=4, width=8, seed=7))
    b = extract_tokens(crop, ToyBackbone(side=16, patch=4, width=8, seed=7))
    assert torch.equal(a.patch_tokens, b.patch_tokens)
    assert torch.equal(a.global_token, b.global_token)


@pytest.mark.filterwarnings("error")
def test_image_tensor_copies_read_only_pixels():
    img = ImageBuffer.filled(4, 4, 0.25, channels=1)
    assert not img.pixels.flags.writeable
    tensor = image_tensor(img)
    assert tensor.shape == (1, 4, 4)
    tensor += 1.0
    assert np.all(img.pixels == 0.25)


def test_extraction_rejects_non_square_crops():
    backbone = ToyBackbone(side=16, patch=4, width=8)
    with pytest.raises(InvalidArgumentError, match="square"):
        extract_tokens(ImageBuffer(np.zeros((10, 12, 3))), backbone)


def test_backbone_geometry_validation():
    with pytest.raises(InvalidArgumentError):
        ToyBackbone(side=30, patch=8)
    with pytest.raises(InvalidArgumentError):
        ToyBackbone(width=0)


def test_projection_stacks_global_above_patches():
    backbone = ToyBackbone(side=16, patch=4, width=8)
    out = extract_tokens(_random_crop(16), backbone)
    proj = IdProjector(8, 12).double()
    tokens = project_id_tokens(out, proj)
    assert tokens.tokens.shape == (17, 12)
    assert tokens.rows == 17 and tokens.width == 12
    with torch.no_grad():
        torch.testing.assert_close(tokens.tokens.detach()[0], proj(out.global_token[0]))
        torch.testing.assert_close(tokens.tokens.detach()[1:], proj(out.patch_tokens))


def test_projection_width_mismatch():
    out = BackboneOutput(torch.zeros(1, 8, dtype=torch.float64), torch.zeros(4, 8, dtype=torch.float64))
    with pytest.raises(InvalidArgumentError, match="projector"):
        project_id_tokens(out, IdProjector(6, 12))


def test_backbone_output_shape_checks():
    with pytest.raises(InvalidArgumentError):
        BackboneOutput(torch.zeros(2, 8), torch.zeros(4, 8))
    with pytest.raises(InvalidArgumentError):
        BackboneOutput(torch.zeros(1, 8), torch.full((4, 8), float("nan")))


def test_id_tokens_batching():
    single = IdTokens(torch.zeros(5, 4))
    assert single.batched().shape == (1, 5, 4)
    stacked = IdTokens.stack([single, single, single])
    assert stacked.batched().shape == (3, 5, 4)
    with pytest.raises(InvalidArgumentError):
        IdTokens(torch.zeros(4))
