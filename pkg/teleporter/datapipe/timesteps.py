"""Adaptive timestep sampling: video pairs lean to early (noisy) steps, stills to late ones."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from teleporter.errors import InvalidArgumentError


class Modality(str, Enum):
    VIDEO = "video"
    IMAGE = "image"


@dataclass(frozen=True)
class TimestepSamplerConfig:
    T: int = 1000
    early_boost: float = 0.5
    boundary: int = 500

    def __post_init__(self) -> None:
        if self.T < 2:
            msg = f"T must be at least 2, got {self.T}"
            raise InvalidArgumentError(msg)
        if not 0 < self.boundary < self.T:
            msg = f"boundary must satisfy 0 < boundary < T, got {self.boundary} with T={self.T}"
            raise InvalidArgumentError(msg)
        if not 0.0 <= self.early_boost <= 1.0:
            msg = f"early_boost must be in [0, 1], got {self.early_boost}"
            raise InvalidArgumentError(msg)

    @property
    def favored_mass(self) -> float:
        """Probability of landing in the half a modality favours."""
        return 0.5 * (1.0 + self.early_boost)


def sample_timestep(
    modality: Modality | str, cfg: TimestepSamplerConfig, rng: np.random.Generator
) -> int:
    """Piecewise-uniform draw in [0, T).

    Video favours [boundary, T), images favour [0, boundary); the favoured half
    carries ``0.5 * (1 + early_boost)`` of the mass. ``early_boost = 0`` draws
    uniformly over [0, T) whatever the boundary.
    """
    modality = Modality(modality)
    if cfg.early_boost == 0.0:
        return int(rng.integers(0, cfg.T))
    early = (cfg.boundary, cfg.T)
    late = (0, cfg.boundary)
    favored, other = (early, late) if modality is Modality.VIDEO else (late, early)
    lo, hi = favored if rng.random() < cfg.favored_mass else other
    return int(rng.integers(lo, hi))
