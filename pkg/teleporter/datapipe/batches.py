"""Seeded batch loading over a manifest through ``torch.utils.data``."""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
from torch.utils.data import DataLoader, Dataset, Sampler

from teleporter.collage.shape import ShapeSimConfig
from teleporter.datapipe.manifest import Manifest, ManifestEntry, load_clip, load_still
from teleporter.datapipe.pairs import (
    DEFAULT_BOX_JITTER,
    AugmentConfig,
    TrainingPair,
    make_image_pair,
    sample_video_pair,
)
from teleporter.datapipe.timesteps import Modality, TimestepSamplerConfig, sample_timestep
from teleporter.errors import EmptyDatasetError, InvalidArgumentError

log = logging.getLogger(__name__)

PREFETCH_FACTOR = 2


@dataclass(frozen=True)
class PairSettings:
    """Everything pair construction draws on besides the entry and its seed."""

    shape: ShapeSimConfig = field(default_factory=ShapeSimConfig)
    timesteps: TimestepSamplerConfig = field(default_factory=TimestepSamplerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    box_jitter: float = DEFAULT_BOX_JITTER


@dataclass(frozen=True, eq=False)
class Batch:
    pairs: tuple[TrainingPair, ...]
    timesteps: np.ndarray
    seed: int
    epoch: int

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def video_fraction(self) -> float:
        return sum(p.modality is Modality.VIDEO for p in self.pairs) / len(self.pairs)


@dataclass(frozen=True)
class ItemKey:
    """Where an item sits in the run; its random stream is derived from this alone."""

    epoch: int
    batch: int
    position: int
    entry: int


@dataclass(frozen=True, eq=False)
class _Item:
    key: ItemKey
    pair: TrainingPair
    timestep: int


def build_pair(
    entry: ManifestEntry, rng: np.random.Generator, settings: PairSettings
) -> TrainingPair:
    if entry.modality is Modality.VIDEO:
        return sample_video_pair(
            load_clip(entry), entry.instance_id, rng,
            shape_cfg=settings.shape, box_jitter=settings.box_jitter,
        )
    img, mask = load_still(entry)
    return make_image_pair(
        img, mask, rng,
        augment=settings.augment, shape_cfg=settings.shape, box_jitter=settings.box_jitter,
    )


class PairDataset(Dataset):
    """Builds one training pair per ``ItemKey`` from a child seed of the run seed."""

    def __init__(self, manifest: Manifest, seed: int, settings: PairSettings | None = None) -> None:
        self.entries = manifest.entries
        self.seed = seed
        self.settings = settings or PairSettings()

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key: ItemKey) -> _Item:
        rng = np.random.default_rng([self.seed, key.epoch, key.batch, key.position])
        pair = build_pair(self.entries[key.entry], rng, self.settings)
        return _Item(key, pair, sample_timestep(pair.modality, self.settings.timesteps, rng))

    def batch_seed(self, epoch: int, batch: int) -> int:
        return int(np.random.default_rng([self.seed, epoch, batch]).integers(2**63 - 1))

    def collate(self, items: Sequence[_Item]) -> Batch:
        first = items[0].key
        return Batch(
            pairs=tuple(item.pair for item in items),
            timesteps=np.array([item.timestep for item in items], dtype=np.int64),
            seed=self.batch_seed(first.epoch, first.batch),
            epoch=first.epoch,
        )


class EpochBatchSampler(Sampler):
    """Seeded permutation per epoch, cut into batches; the last batch of an epoch may be short.

    ``epochs=None`` runs forever.
    """

    def __init__(self, size: int, batch_size: int, seed: int, epochs: int | None = 1) -> None:
        if batch_size < 1:
            msg = f"batch_size must be at least 1, got {batch_size}"
            raise InvalidArgumentError(msg)
        self.size = size
        self.batch_size = batch_size
        self.seed = seed
        self.epochs = epochs

    def __len__(self) -> int:
        if self.epochs is None:
            msg = "An endless sampler has no length"
            raise TypeError(msg)
        return self.epochs * -(-self.size // self.batch_size)

    def __iter__(self) -> Iterator[list[ItemKey]]:
        epoch = 0
        while self.epochs is None or epoch < self.epochs:
            order = np.random.default_rng([self.seed, epoch]).permutation(self.size)
            for batch, start in enumerate(range(0, self.size, self.batch_size)):
                chunk = order[start : start + self.batch_size]
                yield [ItemKey(epoch, batch, pos, int(k)) for pos, k in enumerate(chunk)]
            log.debug("Epoch %d done (%d entries)", epoch, self.size)
            epoch += 1


def make_loader(
    manifest: Manifest,
    batch_size: int,
    seed: int,
    *,
    epochs: int | None = 1,
    settings: PairSettings | None = None,
    workers: int = 1,
) -> DataLoader:
    """DataLoader over ``manifest``; ``workers > 1`` builds pairs in that many processes."""
    if not manifest.entries:
        msg = "Manifest has no entries"
        raise EmptyDatasetError(msg)
    if workers < 1:
        msg = f"workers must be at least 1, got {workers}"
        raise InvalidArgumentError(msg)
    dataset = PairDataset(manifest, seed, settings)
    sampler = EpochBatchSampler(len(dataset), batch_size, seed, epochs)
    extra = {"prefetch_factor": PREFETCH_FACTOR} if workers > 1 else {}
    return DataLoader(
        dataset,
        batch_sampler=sampler,
        collate_fn=dataset.collate,
        num_workers=workers if workers > 1 else 0,
        **extra,
    )


def iterate_batches(
    manifest: Manifest,
    batch_size: int,
    rng: np.random.Generator,
    *,
    epochs: int | None = 1,
    settings: PairSettings | None = None,
    workers: int = 1,
) -> Iterator[Batch]:
    """Shuffle the manifest each epoch and yield batches of pairs with timesteps.

    Every item draws from a seed derived from ``rng`` and its position in the run, so
    the worker count never changes what is produced.
    """
    seed = int(rng.integers(2**63 - 1))
    yield from make_loader(
        manifest, batch_size, seed, epochs=epochs, settings=settings, workers=workers
    )
