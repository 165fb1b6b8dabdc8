"""Run configuration: flat ``key = value`` files with command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from platformdirs import user_data_dir
from rich.console import Console
from rich.table import Table

from teleporter.collage.shape import ShapeSimConfig
from teleporter.collage.stitch import CollageMode
from teleporter.datapipe.batches import PairSettings
from teleporter.datapipe.pairs import AugmentConfig
from teleporter.datapipe.timesteps import TimestepSamplerConfig
from teleporter.diffusion.model import DenoiserConfig
from teleporter.diffusion.schedule import SCHEDULE_KINDS
from teleporter.errors import ConfigError, InvalidArgumentError
from teleporter.inference.conditioning import ConditioningConfig

console = Console()

RUNS_ENV = "ANYDOOR_RUNS"


def runs_dir() -> Path:
    """``$ANYDOOR_RUNS`` if set, else the per-user data directory."""
    override = os.environ.get(RUNS_ENV)
    if override:
        return Path(override).expanduser()
    return Path(user_data_dir("teleporter")) / "runs"


@dataclass(frozen=True)
class RunConfig:
    # denoiser
    image_side: int = 64
    latent_factor: int = 2
    base_width: int = 32
    stages: int = 3
    heads: int = 4
    context_width: int = 64
    backbone_width: int = 32
    backbone_side: int = 64
    backbone_patch: int = 8
    prediction: str = "x"
    dtype: str = "float32"
    init_seed: int = 0
    # diffusion
    schedule: str = "linear"
    timesteps: int = 1000
    sampler_steps: int = 50
    # conditioning
    zoom_ratio: float = 2.0
    erosion_radius: int = 2
    collage_mode: str = "hf"
    remove_background: bool = True
    feather: int = 0
    # shape simulation
    box_probability: float = 0.3
    downsample_ratios: tuple[float, ...] = (0.5, 0.25, 0.125, 0.0625)
    morph_iters_max: int = 5
    # timestep sampling
    adaptive_timesteps: bool = True
    early_boost: float = 0.5
    boundary: int = 500
    # augmentation
    flip_probability: float = 0.5
    max_rotation: float = 15.0
    scale_min: float = 0.9
    scale_max: float = 1.1
    box_jitter: float = 0.1
    # training
    learning_rate: float = 1e-5
    batch_size: int = 4
    train_steps: int = 1000
    checkpoint_every: int = 500
    workers: int = 1
    seed: int | None = None
    # evaluation
    proposals: int = 1
    # paths
    manifest: str = ""
    objects_manifest: str = ""
    scenes_manifest: str = ""
    checkpoint: str = ""
    output_dir: str = ""

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides: object) -> RunConfig:
        """Read ``path`` (if any), apply non-None overrides, validate."""
        values: dict[str, object] = {}
        if path is not None:
            values.update(parse_config_file(path))
        values.update({k: v for k, v in overrides.items() if v is not None})
        unknown = sorted(set(values) - set(cls.field_names()))
        if unknown:
            msg = f"Unknown config keys: {', '.join(unknown)}"
            raise ConfigError(msg)
        cfg = cls(**values)  # type: ignore[arg-type]
        cfg.validate()
        return cfg

    def with_overrides(self, **overrides: object) -> RunConfig:
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    # ── Derived module configs ──────────────────────────────────

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            image_side=self.image_side,
            latent_factor=self.latent_factor,
            base_width=self.base_width,
            stages=self.stages,
            heads=self.heads,
            context_width=self.context_width,
            backbone_width=self.backbone_width,
            backbone_side=self.backbone_side,
            backbone_patch=self.backbone_patch,
            prediction=self.prediction,  # type: ignore[arg-type]
            dtype=self.dtype,
        )

    def shape_config(self) -> ShapeSimConfig:
        return ShapeSimConfig(
            box_probability=self.box_probability,
            downsample_ratios=self.downsample_ratios,
            morph_iters_max=self.morph_iters_max,
        )

    def timestep_config(self) -> TimestepSamplerConfig:
        return TimestepSamplerConfig(
            T=self.timesteps,
            early_boost=self.early_boost if self.adaptive_timesteps else 0.0,
            boundary=self.boundary,
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            flip_probability=self.flip_probability,
            max_rotation=self.max_rotation,
            scale_range=(self.scale_min, self.scale_max),
        )

    def conditioning_config(self) -> ConditioningConfig:
        return ConditioningConfig(
            zoom_ratio=self.zoom_ratio,
            erosion_radius=self.erosion_radius,
            collage_mode=CollageMode(self.collage_mode),
            remove_background=self.remove_background,
        )

    def pair_settings(self) -> PairSettings:
        return PairSettings(
            shape=self.shape_config(),
            timesteps=self.timestep_config(),
            augment=self.augment_config(),
            box_jitter=self.box_jitter,
        )

    def validate(self) -> None:
        """Build every derived config so their checks run before any compute."""
        try:
            self.denoiser_config()
            self.shape_config()
            self.timestep_config()
            self.augment_config()
            self.conditioning_config()
        except (InvalidArgumentError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if self.schedule not in SCHEDULE_KINDS:
            msg = f"Unknown schedule kind: {self.schedule}. Choose from {list(SCHEDULE_KINDS)}"
            raise ConfigError(msg)
        if self.timesteps < 2:
            msg = f"timesteps must be at least 2, got {self.timesteps}"
            raise ConfigError(msg)
        if not 1 <= self.sampler_steps <= self.timesteps:
            msg = f"sampler_steps must lie in [1, {self.timesteps}], got {self.sampler_steps}"
            raise ConfigError(msg)
        for name in ("batch_size", "workers", "proposals", "checkpoint_every"):
            if getattr(self, name) < 1:
                msg = f"{name} must be at least 1, got {getattr(self, name)}"
                raise ConfigError(msg)
        if self.train_steps < 0:
            msg = f"train_steps must be non-negative, got {self.train_steps}"
            raise ConfigError(msg)
        if self.learning_rate <= 0:
            msg = f"learning_rate must be positive, got {self.learning_rate}"
            raise ConfigError(msg)
        if not 0.0 <= self.box_jitter <= 1.0:
            msg = f"box_jitter must lie in [0, 1], got {self.box_jitter}"
            raise ConfigError(msg)
        if self.feather < 0:
            msg = f"feather must be non-negative, got {self.feather}"
            raise ConfigError(msg)

    def require_seed(self, command: str) -> int:
        if self.seed is None:
            msg = f"'{command}' needs a seed: pass --seed or set seed in the config file"
            raise ConfigError(msg)
        return self.seed

    # ── Display / persistence ───────────────────────────────────

    def to_text(self) -> str:
        lines = []
        for name in self.field_names():
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{name} = {value}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict[str, object]:
        return {name: getattr(self, name) for name in self.field_names()}

    def show(self) -> None:
        """Display the resolved configuration."""
        table = Table(show_header=True, header_style="bold")
        table.add_column("key")
        table.add_column("value", style="cyan")
        for name in self.field_names():
            value = getattr(self, name)
            table.add_row(name, "(not set)" if value in (None, "") else str(value))
        console.print(table)


# ── File parsing ──────────────────────────────────────────────────


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, annotation: str) -> object:
    text = raw.strip()
    try:
        if annotation == "bool":
            lowered = text.lower()
            if lowered not in _TRUE | _FALSE:
                raise ValueError(text)
            return lowered in _TRUE
        if annotation == "int":
            return int(text)
        if annotation == "int | None":
            return None if text.lower() in ("", "none") else int(text)
        if annotation == "float":
            return float(text)
        if annotation.startswith("tuple"):
            return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        msg = f"Config key '{name}' expects {annotation}, got {raw!r}"
        raise ConfigError(msg) from exc
    return text


def parse_config_file(path: str | Path) -> dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    file_path = Path(path).expanduser()
    if not file_path.exists():
        msg = f"Config file not found: {file_path}"
        raise ConfigError(msg)
    annotations = {f.name: str(f.type) for f in fields(RunConfig)}
    values: dict[str, object] = {}
    for number, line in enumerate(file_path.read_text(encoding="utf-8").splitlines(), 1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            msg = f"{file_path}:{number}: expected 'key = value', got {line.strip()!r}"
            raise ConfigError(msg)
        key, raw = (part.strip() for part in content.split("=", 1))
        if key not in annotations:
            msg = f"{file_path}:{number}: unknown config key '{key}'"
            raise ConfigError(msg)
        values[key] = _coerce(key, raw, annotations[key])
    return values
