"""Deterministic predict-then-renoise sampling over a strided sub-schedule."""

from __future__ import annotations

import numpy as np
import torch

from teleporter.collage.stitch import CollageInput
from teleporter.diffusion.latent import LatentAdapter
from teleporter.diffusion.model import DenoiserModel, build_latent, denoise, encode_details
from teleporter.diffusion.schedule import NoiseSchedule
from teleporter.errors import InvalidArgumentError
from teleporter.idextract.projector import IdTokens
from teleporter.imageops.raster import ImageBuffer


def sampling_timesteps(T: int, steps: int) -> list[int]:
    """Descending, evenly strided steps ending the chain; one step starts at T-1."""
    if steps < 1:
        msg = f"Sampling needs at least one step, got {steps}"
        raise InvalidArgumentError(msg)
    if steps > T:
        msg = f"Cannot take {steps} sampling steps on a {T}-step schedule"
        raise InvalidArgumentError(msg)
    stride = T / steps
    return [int(round(T - k * stride)) - 1 for k in range(steps)]


def initial_noise(model: DenoiserModel, seed: int, batch: int = 1) -> torch.Tensor:
    cfg = model.config
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(
        (batch, cfg.latent_channels, cfg.latent_side, cfg.latent_side),
        generator=generator,
        dtype=model.dtype,
    )


def _split(
    z: torch.Tensor, raw: torch.Tensor, t: int, sched: NoiseSchedule, prediction: str
) -> torch.Tensor:
    """Clean-latent estimate from the model output."""
    if prediction == "x":
        return raw
    alpha, sigma = float(sched.alpha[t]), float(sched.sigma[t])
    return (z - sigma * raw) / alpha


def sample(
    collage: CollageInput,
    id_tokens: IdTokens,
    model: DenoiserModel,
    sched: NoiseSchedule,
    steps: int,
    seed: int,
    *,
    latent: LatentAdapter | None = None,
) -> ImageBuffer:
    """Refine pure noise into an image with the collage's dimensions."""
    timesteps = sampling_timesteps(sched.T, steps)
    latent = latent if latent is not None else build_latent(model.config)
    model.eval()
    with torch.no_grad():
        details = encode_details(collage, model)
        z = initial_noise(model, seed)
        x_hat = z
        for k, t in enumerate(timesteps):
            raw = denoise(z, t, id_tokens, details, model)
            x_hat = _split(z, raw, t, sched, model.config.prediction).clamp(-1.0, 1.0)
            if k + 1 == len(timesteps):
                break
            t_next = timesteps[k + 1]
            eps_hat = (z - float(sched.alpha[t]) * x_hat) / float(sched.sigma[t])
            z = float(sched.alpha[t_next]) * x_hat + float(sched.sigma[t_next]) * eps_hat
        image = latent.decode(x_hat)[0]
    pixels = image.double().numpy().transpose(1, 2, 0)
    return ImageBuffer(np.clip(pixels, 0.0, 1.0))
