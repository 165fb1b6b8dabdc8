"""Region similarity: cosine between pooled backbone features."""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
from sklearn.metrics.pairwise import cosine_similarity

from teleporter.errors import InvalidArgumentError
from teleporter.idextract.backbone import Backbone, extract_tokens
from teleporter.imageops.raster import Box, ImageBuffer, require_box_in_frame
from teleporter.imageops.resize import resize_image


@runtime_checkable
class FeatureExtractor(Protocol):
    name: str

    def __call__(self, img: ImageBuffer) -> np.ndarray:
        """One pooled 1-D feature per image."""
        ...


class BackboneExtractor:
    """Mean of the global and patch tokens, L2-normalized.

    Inputs of any aspect are resized to the backbone's square side first.
    """

    def __init__(self, backbone: Backbone, name: str | None = None) -> None:
        self.backbone = backbone
        self.name = name or type(backbone).__name__

    def __call__(self, img: ImageBuffer) -> np.ndarray:
        side = self.backbone.side
        square = resize_image(img, side, side) if img.size != (side, side) else img
        out = extract_tokens(square, self.backbone)
        tokens = np.concatenate(
            [out.global_token.double().numpy(), out.patch_tokens.double().numpy()], axis=0
        )
        pooled = tokens.mean(axis=0)
        norm = np.linalg.norm(pooled)
        return pooled / norm if norm > 0 else pooled


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(1, -1)
    b = np.asarray(b, dtype=np.float64).reshape(1, -1)
    if a.shape != b.shape:
        msg = f"Feature widths differ: {a.shape[1]} vs {b.shape[1]}"
        raise InvalidArgumentError(msg)
    return float(np.clip(cosine_similarity(a, b)[0, 0], -1.0, 1.0))


def region_similarity_score(
    generated: ImageBuffer, box: Box, target: ImageBuffer, extractor: FeatureExtractor
) -> float:
    """Cosine between the features of ``generated`` cropped to ``box`` and of ``target``."""
    require_box_in_frame(box, generated.width, generated.height)
    region = ImageBuffer(generated.pixels[box.slices])
    return cosine_score(extractor(region), extractor(target))
