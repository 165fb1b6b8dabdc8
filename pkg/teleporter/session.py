"""Session state for a teleporter run."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch

from teleporter.config import RunConfig
from teleporter.diffusion.checkpoint import (
    load_checkpoint,
    load_optimizer_state,
    save_checkpoint,
    save_optimizer_state,
)
from teleporter.diffusion.latent import LatentAdapter
from teleporter.diffusion.model import DenoiserModel, build_backbone, build_latent, build_model
from teleporter.diffusion.schedule import NoiseSchedule, make_schedule
from teleporter.diffusion.train import StepRecord, make_optimizer
from teleporter.errors import ConfigError
from teleporter.idextract.backbone import Backbone

log = logging.getLogger(__name__)

ARCHITECTURE_FIELDS = (
    "image_side", "latent_factor", "base_width", "stages", "heads", "context_width",
    "backbone_width", "backbone_side", "backbone_patch", "prediction", "dtype",
)


@dataclass
class Session:
    """Holds the model and everything built around it for one run."""

    config: RunConfig
    model: DenoiserModel
    schedule: NoiseSchedule
    backbone: Backbone
    latent: LatentAdapter
    step: int = 0
    history: list[StepRecord] = field(default_factory=list)
    optimizer: torch.optim.Optimizer | None = None
    optimizer_state: dict[str, Any] | None = None

    @classmethod
    def create(cls, config: RunConfig) -> Session:
        """Fresh model from the config, or the configured checkpoint if one is set."""
        if config.checkpoint:
            return cls.from_checkpoint(config.checkpoint, config)
        denoiser = config.denoiser_config()
        return cls(
            config=config,
            model=build_model(denoiser, seed=config.init_seed),
            schedule=make_schedule(config.timesteps, config.schedule),
            backbone=build_backbone(denoiser),
            latent=build_latent(denoiser),
        )

    @classmethod
    def from_checkpoint(cls, path: str | Path, config: RunConfig) -> Session:
        """The checkpoint's architecture and schedule win over the config's."""
        ckpt = load_checkpoint(path)
        if ckpt.schedule.T != config.timesteps or ckpt.schedule.kind != config.schedule:
            log.info(
                "Using the checkpoint schedule (%s, T=%d) over the configured one",
                ckpt.schedule.kind, ckpt.schedule.T,
            )
        T = ckpt.schedule.T
        architecture = {name: getattr(ckpt.model.config, name) for name in ARCHITECTURE_FIELDS}
        resolved = config.with_overrides(timesteps=T, schedule=ckpt.schedule.kind, **architecture)
        if not 0 < resolved.boundary < T:
            resolved = resolved.with_overrides(boundary=T // 2)
        if resolved.sampler_steps > T:
            log.info("Capping sampler_steps at the checkpoint's T=%d", T)
            resolved = resolved.with_overrides(sampler_steps=T)
        resolved.validate()
        denoiser = ckpt.model.config
        return cls(
            config=resolved,
            model=ckpt.model,
            schedule=ckpt.schedule,
            backbone=build_backbone(denoiser),
            latent=build_latent(denoiser),
            step=ckpt.step,
            optimizer_state=load_optimizer_state(path),
        )

    def ensure_optimizer(self) -> torch.optim.Optimizer:
        """Adam over the trainable parameters, carrying on from a saved state if there is one.

        The configured learning rate wins over the saved one.
        """
        if self.optimizer is not None:
            return self.optimizer
        optimizer = make_optimizer(self.model, self.config.learning_rate)
        if self.optimizer_state is not None:
            try:
                optimizer.load_state_dict(self.optimizer_state)
            except (ValueError, KeyError) as exc:
                msg = f"Saved optimizer state does not match the model: {exc}"
                raise ConfigError(msg) from exc
            for group in optimizer.param_groups:
                group["lr"] = self.config.learning_rate
            log.info("Restored optimizer state from step %d", self.step)
        self.optimizer = optimizer
        return optimizer

    def record(self, entry: StepRecord) -> None:
        self.history.append(entry)
        self.step = entry.step + 1

    def save(self, path: str | Path) -> Path:
        output = save_checkpoint(self.model, self.schedule, path, step=self.step)
        if self.optimizer is not None:
            save_optimizer_state(self.optimizer, output)
        return output

    def summary(self) -> str:
        trainable = sum(p.numel() for p in self.model.trainable_parameters())
        frozen = sum(p.numel() for p in self.model.frozen_parameters())
        parts = [
            f"step {self.step}",
            f"{trainable:,} trainable / {frozen:,} frozen parameters",
            f"schedule {self.schedule.kind} (T={self.schedule.T})",
        ]
        if self.history:
            parts.append(f"last loss {self.history[-1].loss:.5f}")
        return ", ".join(parts)
