"""End-to-end teleportation of an object into a scene box."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from teleporter.diffusion.latent import LatentAdapter
from teleporter.diffusion.model import DenoiserModel, build_backbone, build_latent
from teleporter.diffusion.sampler import sample
from teleporter.diffusion.schedule import NoiseSchedule, make_schedule
from teleporter.idextract.backbone import Backbone, extract_tokens
from teleporter.idextract.projector import project_id_tokens
from teleporter.imageops.raster import BinaryMask, Box, ImageBuffer
from teleporter.inference.conditioning import ConditioningConfig, prepare_condition, stage
from teleporter.inference.zoom import paste_back

log = logging.getLogger(__name__)

DEFAULT_SAMPLER_STEPS = 50


def teleport(
    object_img: ImageBuffer,
    object_mask: BinaryMask,
    scene: ImageBuffer,
    box: Box,
    shape_mask: BinaryMask | None = None,
    *,
    model: DenoiserModel,
    seed: int,
    sched: NoiseSchedule | None = None,
    steps: int = DEFAULT_SAMPLER_STEPS,
    conditioning: ConditioningConfig | None = None,
    backbone: Backbone | None = None,
    latent: LatentAdapter | None = None,
    feather: int = 0,
) -> ImageBuffer:
    """Synthesize ``object_img`` inside ``box`` of ``scene``; same seed, same output.

    Failures are raised as StageError labelled with the failing stage.
    """
    cfg = model.config
    sched = sched or make_schedule()
    conditioning = conditioning or ConditioningConfig()
    backbone = backbone if backbone is not None else build_backbone(cfg)
    latent = latent if latent is not None else build_latent(cfg)

    # Stochastic collage modes draw from the same seed as the sampler.
    cond = prepare_condition(
        object_img, object_mask, scene, box, shape_mask,
        cfg.image_side, conditioning, np.random.default_rng(seed),
    )
    with stage("id-tokens"):
        tokens = project_id_tokens(extract_tokens(cond.object_img, backbone), model.projector)
    with stage("sample"):
        result = sample(cond.collage, tokens, model, sched, steps, seed, latent=latent)
    with stage("paste"):
        out = paste_back(result, cond.transform, scene, feather=feather)
    log.debug("Teleported into box %s via square %s", box, cond.transform.square)
    return out


@dataclass(frozen=True)
class Placement:
    """One object for sequential composition."""

    object_img: ImageBuffer
    object_mask: BinaryMask
    box: Box
    shape_mask: BinaryMask | None = None


def teleport_many(
    placements: Sequence[Placement],
    scene: ImageBuffer,
    *,
    model: DenoiserModel,
    seed: int,
    **kwargs: object,
) -> ImageBuffer:
    """Teleport each placement in order, each into the previous result.

    Placement ``k`` samples with ``seed + k``.
    """
    current = scene
    for k, placement in enumerate(placements):
        current = teleport(
            placement.object_img, placement.object_mask, current, placement.box,
            placement.shape_mask, model=model, seed=seed + k, **kwargs,  # type: ignore[arg-type]
        )
    return current
