"""Checkpoint container: safetensors parameters plus a JSON header.

Header keys (all strings):

- ``format``: ``teleporter-checkpoint``
- ``version``: container version, currently ``1``
- ``config``: JSON of the DenoiserConfig
- ``schedule``: JSON ``{"kind": ..., "T": ...}``
- ``step``: training step the parameters were saved at

Tensors are stored as little-endian float32 under their ``state_dict`` names.

When a run has an optimizer, its state goes to a sidecar next to the checkpoint
(``<stem>.optim.pt``); resuming from the checkpoint restores it.
"""

from __future__ import annotations

import json
import logging
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save_file

from teleporter.diffusion.model import DenoiserConfig, DenoiserModel
from teleporter.diffusion.schedule import NoiseSchedule, make_schedule
from teleporter.errors import ConfigError

log = logging.getLogger(__name__)

FORMAT_NAME = "teleporter-checkpoint"
FORMAT_VERSION = "1"


@dataclass
class Checkpoint:
    model: DenoiserModel
    schedule: NoiseSchedule
    step: int


def save_checkpoint(
    model: DenoiserModel, sched: NoiseSchedule, path: str | Path, *, step: int = 0
) -> Path:
    output = Path(path).expanduser().resolve()
    output.parent.mkdir(parents=True, exist_ok=True)
    tensors = {
        name: value.detach().to(torch.float32).contiguous()
        for name, value in model.state_dict().items()
    }
    metadata = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": model.config.to_json(),
        "schedule": json.dumps({"kind": sched.kind, "T": sched.T}),
        "step": str(step),
    }
    save_file(tensors, str(output), metadata=metadata)
    log.info("Checkpoint written: %s (step %d)", output, step)
    return output


def optimizer_path(path: str | Path) -> Path:
    return Path(path).expanduser().resolve().with_suffix(".optim.pt")


def save_optimizer_state(optimizer: torch.optim.Optimizer, path: str | Path) -> Path:
    """Write the optimizer state beside the checkpoint at ``path``."""
    output = optimizer_path(path)
    torch.save(optimizer.state_dict(), output)
    return output


def load_optimizer_state(path: str | Path) -> dict[str, Any] | None:
    """Optimizer state saved beside the checkpoint at ``path``, or None when there is none."""
    sidecar = optimizer_path(path)
    if not sidecar.exists():
        return None
    try:
        return torch.load(sidecar, map_location="cpu", weights_only=True)
    except (RuntimeError, OSError, pickle.UnpicklingError) as exc:
        msg = f"Unreadable optimizer state: {sidecar} ({exc})"
        raise ConfigError(msg) from exc


def read_header(path: str | Path) -> dict[str, str]:
    file_path = Path(path).expanduser().resolve()
    if not file_path.exists():
        msg = f"Checkpoint not found: {file_path}"
        raise FileNotFoundError(msg)
    try:
        with safe_open(str(file_path), framework="pt") as handle:
            metadata = handle.metadata() or {}
    except (SafetensorError, OSError) as exc:
        msg = f"Not a safetensors checkpoint: {file_path} ({exc})"
        raise ConfigError(msg) from exc
    if metadata.get("format") != FORMAT_NAME:
        msg = f"{file_path} is not a teleporter checkpoint"
        raise ConfigError(msg)
    if metadata.get("version") != FORMAT_VERSION:
        msg = (
            f"Checkpoint version {metadata.get('version')!r} is not supported "
            f"(expected {FORMAT_VERSION})"
        )
        raise ConfigError(msg)
    return metadata


def load_checkpoint(path: str | Path) -> Checkpoint:
    header = read_header(path)
    config = DenoiserConfig.from_json(header["config"])
    schedule_info = json.loads(header["schedule"])
    model = DenoiserModel(config)
    tensors = load_file(str(Path(path).expanduser().resolve()))
    state = {name: value.to(config.torch_dtype) for name, value in tensors.items()}
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        msg = f"Checkpoint parameters do not match the model: missing={missing}, unexpected={unexpected}"
        raise ConfigError(msg)
    return Checkpoint(
        model=model,
        schedule=make_schedule(int(schedule_info["T"]), schedule_info["kind"]),
        step=int(header.get("step", "0")),
    )
