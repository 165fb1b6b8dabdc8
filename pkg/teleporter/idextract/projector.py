"""Affine projection of backbone tokens into the denoiser's cross-attention width."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from teleporter.errors import InvalidArgumentError
from teleporter.idextract.backbone import BackboneOutput


class IdProjector(nn.Module):
    """One shared linear layer (with bias) for the global and patch tokens."""

    def __init__(self, backbone_width: int, context_width: int) -> None:
        super().__init__()
        self.linear = nn.Linear(backbone_width, context_width)

    @property
    def in_width(self) -> int:
        return self.linear.in_features

    @property
    def out_width(self) -> int:
        return self.linear.out_features

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.linear(tokens)


@dataclass(frozen=True, eq=False)
class IdTokens:
    """(N_p + 1) × D_c conditioning tokens; row 0 is the projected global token.

    A leading batch dimension is allowed.
    """

    tokens: torch.Tensor

    def __post_init__(self) -> None:
        if self.tokens.ndim not in (2, 3):
            msg = f"ID tokens must be N×D or B×N×D, got {tuple(self.tokens.shape)}"
            raise InvalidArgumentError(msg)

    @property
    def width(self) -> int:
        return int(self.tokens.shape[-1])

    @property
    def rows(self) -> int:
        return int(self.tokens.shape[-2])

    def batched(self) -> torch.Tensor:
        return self.tokens if self.tokens.ndim == 3 else self.tokens[None]

    @classmethod
    def stack(cls, items: list[IdTokens]) -> IdTokens:
        return cls(torch.stack([t.tokens for t in items]))


def project_id_tokens(out: BackboneOutput, proj: IdProjector) -> IdTokens:
    """Stack the global token above the patch tokens and apply the projector row-wise."""
    if out.width != proj.in_width:
        msg = f"Backbone width {out.width} does not match projector input {proj.in_width}"
        raise InvalidArgumentError(msg)
    dtype = proj.linear.weight.dtype
    stacked = torch.cat([out.global_token, out.patch_tokens], dim=0).to(dtype)
    return IdTokens(proj(stacked))
