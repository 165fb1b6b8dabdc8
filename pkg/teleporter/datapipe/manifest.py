"""Dataset manifests: directory scanning, JSON-lines I/O, entry loading.

Layout under each dataset root::

    clips/<name>/<frame>.png   + clips/<name>/<frame>.mask.png
    stills/<name>.png          + stills/<name>.mask.png

Every clip holds one instance, identified by the clip directory name.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import pandas as pd
from PIL import Image

from teleporter.datapipe.pairs import ClipFrame
from teleporter.datapipe.timesteps import Modality
from teleporter.errors import ManifestError
from teleporter.imageops.raster import BinaryMask, ImageBuffer, read_image, read_mask

log = logging.getLogger(__name__)

COLUMNS = ["paths", "instance_id", "frames", "modality", "quality"]
MASK_SUFFIX = ".mask.png"
HIGH_QUALITY_SIDE = 512


@dataclass(frozen=True)
class ManifestEntry:
    paths: tuple[str, ...]
    instance_id: str
    frames: tuple[int, ...]
    modality: Modality
    quality: str

    def to_record(self) -> dict[str, object]:
        return {
            "paths": list(self.paths),
            "instance_id": self.instance_id,
            "frames": list(self.frames),
            "modality": self.modality.value,
            "quality": self.quality,
        }

    @classmethod
    def from_record(cls, record: dict[str, object]) -> ManifestEntry:
        return cls(
            paths=tuple(str(p) for p in record["paths"]),  # type: ignore[union-attr]
            instance_id=str(record["instance_id"]),
            frames=tuple(int(f) for f in record["frames"]),  # type: ignore[union-attr]
            modality=Modality(record["modality"]),
            quality=str(record["quality"]),
        )


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):  # noqa: ANN204
        return iter(self.entries)

    def modality_counts(self) -> dict[Modality, int]:
        counts = {m: 0 for m in Modality}
        for entry in self.entries:
            counts[entry.modality] += 1
        return counts


def mask_path_for(image_path: str | Path) -> Path:
    path = Path(image_path)
    return path.with_name(path.stem + MASK_SUFFIX)


def _quality(path: Path) -> str:
    with Image.open(path) as im:
        return "high" if min(im.size) >= HIGH_QUALITY_SIDE else "low"


def _images_in(directory: Path) -> list[Path]:
    """PNG images in ``directory`` with their masks checked; orphans raise."""
    images = sorted(p for p in directory.glob("*.png") if not p.name.endswith(MASK_SUFFIX))
    for image in images:
        if not mask_path_for(image).exists():
            msg = f"Missing mask for image: {image} (expected {mask_path_for(image).name})"
            raise ManifestError(msg, image)
    image_names = {p.name for p in images}
    for mask in sorted(directory.glob("*" + MASK_SUFFIX)):
        if mask.name[: -len(MASK_SUFFIX)] + ".png" not in image_names:
            msg = f"Mask has no matching image: {mask}"
            raise ManifestError(msg, mask)
    return images


def _scan_clip(clip_dir: Path) -> ManifestEntry | None:
    frames: list[tuple[int, Path]] = []
    for image in _images_in(clip_dir):
        try:
            frames.append((int(image.stem), image))
        except ValueError as exc:
            msg = f"Clip frame names must be frame numbers: {image}"
            raise ManifestError(msg, image) from exc
    if not frames:
        return None
    frames.sort()
    return ManifestEntry(
        paths=tuple(str(p) for _, p in frames),
        instance_id=clip_dir.name,
        frames=tuple(n for n, _ in frames),
        modality=Modality.VIDEO,
        quality=_quality(frames[0][1]),
    )


def build_manifest(roots: Iterable[str | Path]) -> Manifest:
    """Scan dataset roots into a deterministic manifest sorted by path."""
    entries: list[ManifestEntry] = []
    for root in roots:
        root_path = Path(root).expanduser().resolve()
        if not root_path.is_dir():
            msg = f"Dataset root not found: {root_path}"
            raise ManifestError(msg, root_path)

        clips = root_path / "clips"
        if clips.is_dir():
            for clip_dir in sorted(p for p in clips.iterdir() if p.is_dir()):
                entry = _scan_clip(clip_dir)
                if entry is not None:
                    entries.append(entry)

        stills = root_path / "stills"
        if stills.is_dir():
            for image in _images_in(stills):
                entries.append(
                    ManifestEntry(
                        paths=(str(image),),
                        instance_id=image.stem,
                        frames=(),
                        modality=Modality.IMAGE,
                        quality=_quality(image),
                    )
                )

    entries.sort(key=lambda e: e.paths[0])
    log.info("Manifest built: %d entries", len(entries))
    return Manifest(tuple(entries))


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Write one JSON object per line (UTF-8)."""
    output = Path(path).expanduser()
    output.parent.mkdir(parents=True, exist_ok=True)
    if not manifest.entries:
        output.write_text("", encoding="utf-8")
        return output
    frame = pd.DataFrame.from_records([e.to_record() for e in manifest.entries], columns=COLUMNS)
    frame.to_json(output, orient="records", lines=True, force_ascii=False)
    return output


def read_manifest(path: str | Path) -> Manifest:
    """Load a JSON-lines manifest; every referenced image and mask must exist."""
    file_path = Path(path).expanduser().resolve()
    if not file_path.exists():
        msg = f"Manifest not found: {file_path}"
        raise ManifestError(msg, file_path)
    if not file_path.read_text(encoding="utf-8").strip():
        return Manifest()

    frame = pd.read_json(file_path, lines=True, dtype=False, convert_dates=False)
    missing = [c for c in COLUMNS if c not in frame.columns]
    if missing:
        msg = f"Manifest {file_path} lacks keys: {', '.join(missing)}"
        raise ManifestError(msg, file_path)

    entries = tuple(ManifestEntry.from_record(r) for r in frame[COLUMNS].to_dict("records"))
    for entry in entries:
        for image in entry.paths:
            for required in (Path(image), mask_path_for(image)):
                if not required.exists():
                    msg = f"Manifest references a missing file: {required}"
                    raise ManifestError(msg, required)
    return Manifest(entries)


# ── Entry loading ────────────────────────────────────────────────


@lru_cache(maxsize=256)
def load_still(entry: ManifestEntry) -> tuple[ImageBuffer, BinaryMask]:
    image = entry.paths[0]
    return read_image(image), read_mask(mask_path_for(image))


@lru_cache(maxsize=64)
def load_clip(entry: ManifestEntry) -> tuple[ClipFrame, ...]:
    return tuple(
        ClipFrame(read_image(p), {entry.instance_id: read_mask(mask_path_for(p))})
        for p in entry.paths
    )
