"""The conditional denoiser: frozen UNet encoder, trainable decoder, detail encoder, ID projector.

Decoder stages consume ``[upsampled features ‖ encoder skip ‖ detail map]``
concatenated along channels; every stage (encoder, middle, decoder) carries one
cross-attention over the ID tokens.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from teleporter.collage.stitch import CollageInput
from teleporter.diffusion.latent import PoolingLatentAdapter
from teleporter.errors import ConfigError, InvalidArgumentError
from teleporter.idextract.backbone import ToyBackbone
from teleporter.idextract.projector import IdProjector, IdTokens

Prediction = Literal["x", "epsilon"]
_DTYPES = {"float32": torch.float32, "float64": torch.float64}
_COLLAGE_CHANNELS = 4
_HINT_WIDTH = 16


@dataclass(frozen=True)
class DenoiserConfig:
    image_side: int = 64
    latent_factor: int = 2
    latent_channels: int = 3
    base_width: int = 32
    stages: int = 3
    heads: int = 4
    context_width: int = 64
    backbone_width: int = 32
    backbone_side: int = 64
    backbone_patch: int = 8
    backbone_seed: int = 0
    prediction: Prediction = "x"
    dtype: str = "float32"

    def __post_init__(self) -> None:
        positive = {
            "image_side": self.image_side, "latent_factor": self.latent_factor,
            "latent_channels": self.latent_channels, "base_width": self.base_width,
            "stages": self.stages, "heads": self.heads, "context_width": self.context_width,
            "backbone_width": self.backbone_width, "backbone_side": self.backbone_side,
            "backbone_patch": self.backbone_patch,
        }
        for name, value in positive.items():
            if value < 1:
                msg = f"{name} must be positive, got {value}"
                raise ConfigError(msg)
        if self.latent_factor & (self.latent_factor - 1):
            msg = f"latent_factor must be a power of two, got {self.latent_factor}"
            raise ConfigError(msg)
        reduction = self.latent_factor * 2 ** (self.stages - 1)
        if self.image_side % reduction:
            msg = (
                f"image_side {self.image_side} must be divisible by {reduction} "
                f"(latent factor × 2^(stages-1))"
            )
            raise ConfigError(msg)
        if self.base_width % self.heads:
            msg = f"base_width {self.base_width} must be divisible by heads {self.heads}"
            raise ConfigError(msg)
        if self.backbone_side % self.backbone_patch:
            msg = f"backbone_side {self.backbone_side} must be a multiple of backbone_patch"
            raise ConfigError(msg)
        if self.prediction not in ("x", "epsilon"):
            msg = f"prediction must be 'x' or 'epsilon', got {self.prediction!r}"
            raise ConfigError(msg)
        if self.dtype not in _DTYPES:
            msg = f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}"
            raise ConfigError(msg)

    @property
    def latent_side(self) -> int:
        return self.image_side // self.latent_factor

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(self.base_width * 2**s for s in range(self.stages))

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> DenoiserConfig:
        try:
            return cls(**json.loads(text))
        except (TypeError, ValueError) as exc:
            msg = f"Invalid denoiser config header: {exc}"
            raise ConfigError(msg) from exc


# ── Building blocks ──────────────────────────────────────────────


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(channels, 8), channels)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, (B,) → (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / max(half, 1)
    )
    args = t.double()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int | None = None) -> None:
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim else None
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None and temb is not None:
            h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Residual attention from spatial features (queries) to ID tokens (keys/values)."""

    def __init__(self, channels: int, context_width: int, heads: int) -> None:
        super().__init__()
        self.norm = _norm(channels)
        self.attn = nn.MultiheadAttention(
            channels, heads, kdim=context_width, vdim=context_width, batch_first=True
        )

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        query = self.norm(x).flatten(2).transpose(1, 2)
        out, _ = self.attn(query, context, context, need_weights=False)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class UNetEncoder(nn.Module):
    """Time embedding, down stages and the middle block. Frozen."""

    def __init__(self, config: DenoiserConfig) -> None:
        super().__init__()
        widths = config.widths
        self.time_dim = 4 * config.base_width
        self.time_mlp = nn.Sequential(
            nn.Linear(config.base_width, self.time_dim),
            nn.SiLU(),
            nn.Linear(self.time_dim, self.time_dim),
        )
        self.conv_in = nn.Conv2d(config.latent_channels, widths[0], 3, padding=1)
        self.blocks = nn.ModuleList()
        self.attns = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = widths[0]
        for s, width in enumerate(widths):
            self.blocks.append(ResBlock(prev, width, self.time_dim))
            self.attns.append(CrossAttention(width, config.context_width, config.heads))
            if s < len(widths) - 1:
                self.downs.append(nn.Conv2d(width, width, 3, stride=2, padding=1))
            prev = width
        self.mid_block = ResBlock(prev, prev, self.time_dim)
        self.mid_attn = CrossAttention(prev, config.context_width, config.heads)
        self.base_width = config.base_width

    def embed_time(self, t: torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
        return self.time_mlp(timestep_embedding(t, self.base_width).to(dtype))

    def forward(
        self, z: torch.Tensor, temb: torch.Tensor, context: torch.Tensor
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        h = self.conv_in(z)
        skips: list[torch.Tensor] = []
        for s, (block, attn) in enumerate(zip(self.blocks, self.attns)):
            h = attn(block(h, temb), context)
            skips.append(h)
            if s < len(self.downs):
                h = self.downs[s](h)
        h = self.mid_attn(self.mid_block(h, temb), context)
        return h, skips


class UNetDecoder(nn.Module):
    """Up stages with widened inputs for the skip and detail channels."""

    def __init__(self, config: DenoiserConfig, time_dim: int) -> None:
        super().__init__()
        widths = config.widths
        self.blocks = nn.ModuleList()
        self.attns = nn.ModuleList()
        incoming = widths[-1]
        # Built deepest-first, applied in that order.
        for width in reversed(widths):
            self.blocks.append(ResBlock(incoming + 2 * width, width, time_dim))
            self.attns.append(CrossAttention(width, config.context_width, config.heads))
            incoming = width
        self.norm_out = _norm(widths[0])
        self.conv_out = nn.Conv2d(widths[0], config.latent_channels, 3, padding=1)

    def forward(
        self,
        h: torch.Tensor,
        skips: Sequence[torch.Tensor],
        details: Sequence[torch.Tensor],
        temb: torch.Tensor,
        context: torch.Tensor,
    ) -> torch.Tensor:
        depth = len(skips)
        for k, (block, attn) in enumerate(zip(self.blocks, self.attns)):
            level = depth - 1 - k
            if k > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = torch.cat([h, skips[level], details[level]], dim=1)
            h = attn(block(h, temb), context)
        return self.conv_out(F.silu(self.norm_out(h)))


class DetailEncoder(nn.Module):
    """ControlNet-style branch over the 4-channel collage; zero-initialized outputs."""

    def __init__(self, config: DenoiserConfig) -> None:
        super().__init__()
        widths = config.widths
        hint: list[nn.Module] = [nn.Conv2d(_COLLAGE_CHANNELS, _HINT_WIDTH, 3, padding=1), nn.SiLU()]
        for _ in range(int(math.log2(config.latent_factor))):
            hint += [nn.Conv2d(_HINT_WIDTH, _HINT_WIDTH, 3, stride=2, padding=1), nn.SiLU()]
        hint.append(nn.Conv2d(_HINT_WIDTH, widths[0], 3, padding=1))
        self.hint = nn.Sequential(*hint)
        self.blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        self.zero_convs = nn.ModuleList()
        prev = widths[0]
        for s, width in enumerate(widths):
            self.blocks.append(ResBlock(prev, width))
            self.zero_convs.append(zero_module(nn.Conv2d(width, width, 1)))
            if s < len(widths) - 1:
                self.downs.append(nn.Conv2d(width, width, 3, stride=2, padding=1))
            prev = width

    def forward(self, collage: torch.Tensor) -> list[torch.Tensor]:
        h = self.hint(collage)
        maps: list[torch.Tensor] = []
        for s, (block, zero_conv) in enumerate(zip(self.blocks, self.zero_convs)):
            h = block(h)
            maps.append(zero_conv(h))
            if s < len(self.downs):
                h = self.downs[s](h)
        return maps


# ── Model ────────────────────────────────────────────────────────


FROZEN_MODULES = ("encoder",)
TRAINABLE_MODULES = ("decoder", "detail_encoder", "projector")


class DenoiserModel(nn.Module):
    def __init__(self, config: DenoiserConfig) -> None:
        super().__init__()
        self.config = config
        self.encoder = UNetEncoder(config)
        self.decoder = UNetDecoder(config, self.encoder.time_dim)
        self.detail_encoder = DetailEncoder(config)
        self.projector = IdProjector(config.backbone_width, config.context_width)
        self.encoder.requires_grad_(False)
        self.to(config.torch_dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.config.torch_dtype

    def partition(self) -> dict[str, list[str]]:
        """Parameter names split into the frozen and the trainable set."""
        groups: dict[str, list[str]] = {"frozen": [], "trainable": []}
        for name, _ in self.named_parameters():
            top = name.split(".", 1)[0]
            groups["frozen" if top in FROZEN_MODULES else "trainable"].append(name)
        return groups

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for m in TRAINABLE_MODULES for p in getattr(self, m).parameters()]

    def frozen_parameters(self) -> list[nn.Parameter]:
        return [p for m in FROZEN_MODULES for p in getattr(self, m).parameters()]

    def train(self, mode: bool = True) -> DenoiserModel:
        super().train(mode)
        self.encoder.eval()
        return self

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        context: torch.Tensor,
        details: Sequence[torch.Tensor],
    ) -> torch.Tensor:
        temb = self.encoder.embed_time(t, z_t.dtype)
        h, skips = self.encoder(z_t, temb, context)
        return self.decoder(h, skips, details, temb, context)


@dataclass(frozen=True, eq=False)
class DetailMaps:
    """One (B, C_s, h_s, w_s) map per decoder stage; level 0 has the latent dims."""

    levels: tuple[torch.Tensor, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.levels)

    @classmethod
    def zeros(cls, config: DenoiserConfig, batch: int = 1) -> DetailMaps:
        side = config.latent_side
        return cls(
            tuple(
                torch.zeros(batch, width, side >> s, side >> s, dtype=config.torch_dtype)
                for s, width in enumerate(config.widths)
            )
        )

    def is_zero(self) -> bool:
        return all(not level.any() for level in self.levels)


def collage_tensor(collages: CollageInput | Sequence[CollageInput], dtype: torch.dtype) -> torch.Tensor:
    """Collage(s) → (B, 4, H, W)."""
    items = [collages] if isinstance(collages, CollageInput) else list(collages)
    arrays = np.stack([c.as_array().transpose(2, 0, 1) for c in items])
    return torch.from_numpy(np.ascontiguousarray(arrays)).to(dtype)


def encode_details(
    collage: CollageInput | Sequence[CollageInput], model: DenoiserModel
) -> DetailMaps:
    side = model.config.image_side
    items = [collage] if isinstance(collage, CollageInput) else list(collage)
    for item in items:
        if item.size != (side, side):
            msg = f"Collage is {item.size[0]}×{item.size[1]}, model expects {side}×{side}"
            raise InvalidArgumentError(msg)
    return DetailMaps(tuple(model.detail_encoder(collage_tensor(items, model.dtype))))


def _context(tokens: IdTokens, model: DenoiserModel, batch: int) -> torch.Tensor:
    if tokens.width != model.config.context_width:
        msg = (
            f"ID token width {tokens.width} does not match the cross-attention "
            f"width {model.config.context_width}"
        )
        raise InvalidArgumentError(msg)
    context = tokens.batched().to(model.dtype)
    if context.shape[0] == 1 and batch > 1:
        context = context.expand(batch, -1, -1)
    if context.shape[0] != batch:
        msg = f"Got {context.shape[0]} token sets for a batch of {batch}"
        raise InvalidArgumentError(msg)
    return context


def denoise(
    z_t: torch.Tensor,
    t: int | torch.Tensor,
    id_tokens: IdTokens,
    details: DetailMaps | None,
    model: DenoiserModel,
) -> torch.Tensor:
    """Model prediction for ``z_t`` at step ``t``: the clean latent for x-prediction models.

    ``details=None`` feeds zero maps. Accepts a single (C, h, w) latent or a batch.
    """
    cfg = model.config
    single = z_t.ndim == 3
    z = z_t[None] if single else z_t
    expected = (cfg.latent_channels, cfg.latent_side, cfg.latent_side)
    if z.ndim != 4 or tuple(z.shape[1:]) != expected:
        msg = f"Latent must be {expected}, got {tuple(z_t.shape)}"
        raise InvalidArgumentError(msg)
    batch = z.shape[0]
    steps = torch.as_tensor(t).long().reshape(-1)
    if steps.numel() == 1:
        steps = steps.expand(batch)
    context = _context(id_tokens, model, batch)
    if details is None:
        details = DetailMaps.zeros(cfg, batch)
    if len(details) != cfg.stages:
        msg = f"Expected {cfg.stages} detail levels, got {len(details)}"
        raise InvalidArgumentError(msg)
    levels = [
        level.expand(batch, -1, -1, -1) if level.shape[0] == 1 else level
        for level in details.levels
    ]
    out = model(z.to(model.dtype), steps, context, levels)
    return out[0] if single else out


def build_backbone(config: DenoiserConfig) -> ToyBackbone:
    return ToyBackbone(
        side=config.backbone_side,
        patch=config.backbone_patch,
        width=config.backbone_width,
        seed=config.backbone_seed,
    )


def build_latent(config: DenoiserConfig) -> PoolingLatentAdapter:
    return PoolingLatentAdapter(config.latent_factor)


def build_model(config: DenoiserConfig, seed: int = 0) -> DenoiserModel:
    """Fresh model whose initial weights depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return DenoiserModel(config)
