"""Variance-preserving noise schedules and the forward noising step."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch

from teleporter.errors import InvalidArgumentError

ScheduleKind = Literal["linear", "scaled_linear", "cosine"]
SCHEDULE_KINDS: tuple[str, ...] = ("linear", "scaled_linear", "cosine")

_VP_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step signal (alpha) and noise (sigma) coefficients, step 0 being the identity."""

    T: int
    kind: str
    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        alpha = np.asarray(self.alpha, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if alpha.shape != (self.T,) or sigma.shape != (self.T,):
            msg = f"Schedule arrays must have length T={self.T}"
            raise InvalidArgumentError(msg)
        if alpha[0] != 1.0 or sigma[0] != 0.0:
            msg = "Schedule must start at alpha=1, sigma=0"
            raise InvalidArgumentError(msg)
        if np.any(np.diff(alpha) > 0) or np.any(np.diff(sigma) < 0):
            msg = "alpha must be non-increasing and sigma non-decreasing"
            raise InvalidArgumentError(msg)
        if np.max(np.abs(alpha**2 + sigma**2 - 1.0)) >= _VP_TOLERANCE:
            msg = "Schedule is not variance-preserving (alpha² + sigma² != 1)"
            raise InvalidArgumentError(msg)
        alpha.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)

    def check_step(self, t: int) -> None:
        if not 0 <= t < self.T:
            msg = f"Timestep {t} outside [0, {self.T})"
            raise InvalidArgumentError(msg)


def _alpha_bar(T: int, kind: str) -> np.ndarray:
    if kind == "linear":
        betas = np.linspace(1e-4, 0.02, T - 1, dtype=np.float64)
    elif kind == "scaled_linear":
        betas = np.linspace(math.sqrt(0.00085), math.sqrt(0.012), T - 1, dtype=np.float64) ** 2
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        return f / f[0]
    else:
        msg = f"Unknown schedule kind: {kind}. Choose from {list(SCHEDULE_KINDS)}"
        raise InvalidArgumentError(msg)
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def make_schedule(T: int = 1000, kind: ScheduleKind | str = "linear") -> NoiseSchedule:
    """Beta schedule turned into (alpha_t, sigma_t) with alpha_t² + sigma_t² = 1.

    ``alpha_bar_t`` is the product of ``1 - beta`` over steps 1..t, so step 0 is
    noise-free.
    """
    if T < 2:
        msg = f"A schedule needs T >= 2, got {T}"
        raise InvalidArgumentError(msg)
    alpha_bar = np.clip(_alpha_bar(T, kind), 0.0, 1.0)
    return NoiseSchedule(
        T=T, kind=kind, alpha=np.sqrt(alpha_bar), sigma=np.sqrt(1.0 - alpha_bar)
    )


def _coefficients(
    values: np.ndarray, t: int | np.ndarray | torch.Tensor, like: torch.Tensor
) -> torch.Tensor | float:
    if isinstance(t, (int, np.integer)):
        return float(values[int(t)])
    steps = torch.as_tensor(np.asarray(t)).long().reshape(-1)
    picked = torch.as_tensor(values, dtype=like.dtype)[steps]
    return picked.view(-1, *([1] * (like.ndim - 1)))


def add_noise(
    x: torch.Tensor,
    eps: torch.Tensor,
    t: int | np.ndarray | torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """alpha_t · x + sigma_t · eps; ``t`` is one step or one step per batch item."""
    if x.shape != eps.shape:
        msg = f"Latent shapes differ: {tuple(x.shape)} vs {tuple(eps.shape)}"
        raise InvalidArgumentError(msg)
    steps = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t).reshape(-1)
    if steps.size and (steps.min() < 0 or steps.max() >= sched.T):
        msg = f"Timesteps must lie in [0, {sched.T})"
        raise InvalidArgumentError(msg)
    if steps.size > 1 and steps.size != x.shape[0]:
        msg = f"Got {steps.size} timesteps for a batch of {x.shape[0]}"
        raise InvalidArgumentError(msg)
    alpha = _coefficients(sched.alpha, t, x)
    sigma = _coefficients(sched.sigma, t, x)
    return alpha * x + sigma * eps
