"""Training objective, single optimizer steps and the step loop."""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from teleporter.datapipe.batches import Batch
from teleporter.diffusion.latent import LatentAdapter
from teleporter.diffusion.model import DenoiserModel, build_backbone, build_latent
from teleporter.diffusion.schedule import NoiseSchedule, add_noise
from teleporter.errors import InvalidArgumentError, NumericalDivergenceError
from teleporter.idextract.backbone import Backbone, BackboneOutput, extract_tokens, image_tensor
from teleporter.idextract.projector import IdTokens, project_id_tokens
from teleporter.inference.conditioning import ConditioningConfig, prepare_condition
from teleporter.inference.zoom import zoom_in

log = logging.getLogger(__name__)

DEFAULT_LEARNING_RATE = 1e-5


def training_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every element."""
    if pred.shape != target.shape:
        msg = f"Prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ in shape"
        raise InvalidArgumentError(msg)
    return F.mse_loss(pred, target, reduction="mean")


def make_optimizer(model: DenoiserModel, lr: float = DEFAULT_LEARNING_RATE) -> torch.optim.Adam:
    """Adam over the trainable partition only."""
    if lr <= 0:
        msg = f"Learning rate must be positive, got {lr}"
        raise InvalidArgumentError(msg)
    return torch.optim.Adam(model.trainable_parameters(), lr=lr)


@dataclass(frozen=True, eq=False)
class PreparedBatch:
    """Model-ready tensors for one batch."""

    latents: torch.Tensor
    collages: torch.Tensor
    backbone_outputs: tuple[BackboneOutput, ...]
    timesteps: torch.Tensor
    seed: int

    def noise(self) -> torch.Tensor:
        generator = torch.Generator().manual_seed(self.seed)
        return torch.randn(
            self.latents.shape, generator=generator, dtype=self.latents.dtype
        )


def prepare_batch(
    batch: Batch,
    model: DenoiserModel,
    *,
    backbone: Backbone | None = None,
    latent: LatentAdapter | None = None,
    conditioning: ConditioningConfig | None = None,
) -> PreparedBatch:
    """Conditioning for every pair plus the zoomed ground truth mapped to latents."""
    if not len(batch):
        msg = "Cannot train on an empty batch"
        raise InvalidArgumentError(msg)
    cfg = model.config
    backbone = backbone if backbone is not None else build_backbone(cfg)
    latent = latent if latent is not None else build_latent(cfg)
    conditioning = conditioning or ConditioningConfig()

    collages, targets, outputs = [], [], []
    for index, pair in enumerate(batch.pairs):
        rng = np.random.default_rng([batch.seed, index])
        cond = prepare_condition(
            pair.object_img, pair.object_mask, pair.scene, pair.box, pair.shape_mask,
            cfg.image_side, conditioning, rng,
        )
        gt_crop, _ = zoom_in(pair.ground_truth, pair.box, conditioning.zoom_ratio, cfg.image_side)
        collages.append(cond.collage.as_array().transpose(2, 0, 1))
        targets.append(image_tensor(gt_crop))
        outputs.append(extract_tokens(cond.object_img, backbone))

    images = torch.stack(targets).to(model.dtype)
    return PreparedBatch(
        latents=latent.encode(images),
        collages=torch.from_numpy(np.ascontiguousarray(np.stack(collages))).to(model.dtype),
        backbone_outputs=tuple(outputs),
        timesteps=torch.as_tensor(np.asarray(batch.timesteps), dtype=torch.long),
        seed=batch.seed,
    )


def compute_loss(
    prepared: PreparedBatch,
    model: DenoiserModel,
    sched: NoiseSchedule,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Loss of the full forward pass: projector, detail encoder, noising, denoiser."""
    noise = prepared.noise() if noise is None else noise
    tokens = IdTokens.stack([project_id_tokens(o, model.projector) for o in prepared.backbone_outputs])
    details = model.detail_encoder(prepared.collages)
    z_t = add_noise(prepared.latents, noise, prepared.timesteps, sched)
    pred = model(z_t, prepared.timesteps, tokens.tokens, details)
    target = prepared.latents if model.config.prediction == "x" else noise
    return training_loss(pred, target)


def train_step(
    batch: Batch,
    model: DenoiserModel,
    sched: NoiseSchedule,
    optimizer: torch.optim.Optimizer,
    *,
    backbone: Backbone | None = None,
    latent: LatentAdapter | None = None,
    conditioning: ConditioningConfig | None = None,
    step: int | None = None,
) -> float:
    """One optimizer update; returns the loss before the update."""
    prepared = prepare_batch(
        batch, model, backbone=backbone, latent=latent, conditioning=conditioning
    )
    model.train()
    optimizer.zero_grad(set_to_none=True)
    loss = compute_loss(prepared, model, sched)
    if not torch.isfinite(loss):
        where = "" if step is None else f" at step {step}"
        msg = f"Training loss diverged{where}: {loss.item()}"
        raise NumericalDivergenceError(msg, step)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    video_fraction: float
    mean_timestep: float


def fit(
    batches: Iterable[Batch],
    model: DenoiserModel,
    sched: NoiseSchedule,
    optimizer: torch.optim.Optimizer,
    *,
    steps: int,
    start_step: int = 0,
    backbone: Backbone | None = None,
    latent: LatentAdapter | None = None,
    conditioning: ConditioningConfig | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
) -> list[StepRecord]:
    """Run ``steps`` train steps numbered from ``start_step``."""
    cfg = model.config
    backbone = backbone if backbone is not None else build_backbone(cfg)
    latent = latent if latent is not None else build_latent(cfg)
    records: list[StepRecord] = []
    source = iter(batches)
    for step in range(start_step, start_step + steps):
        try:
            batch = next(source)
        except StopIteration:
            log.info("Batch source exhausted after %d steps", step - start_step)
            break
        loss = train_step(
            batch, model, sched, optimizer,
            backbone=backbone, latent=latent, conditioning=conditioning, step=step,
        )
        record = StepRecord(
            step=step,
            loss=loss,
            video_fraction=batch.video_fraction,
            mean_timestep=float(np.mean(batch.timesteps)),
        )
        records.append(record)
        log.debug("step %d loss %.6f video %.2f", step, loss, record.video_fraction)
        if on_step is not None:
            on_step(record)
    return records
