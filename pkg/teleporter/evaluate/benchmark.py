"""Object × scene benchmark: teleport every object into every scene box and score it."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from teleporter.datapipe.manifest import Manifest, ManifestEntry, load_clip, load_still
from teleporter.datapipe.timesteps import Modality
from teleporter.diffusion.latent import LatentAdapter
from teleporter.diffusion.model import DenoiserModel, build_backbone, build_latent
from teleporter.diffusion.schedule import NoiseSchedule
from teleporter.errors import EmptyDatasetError, InvalidArgumentError, StageError
from teleporter.evaluate.similarity import BackboneExtractor, FeatureExtractor, region_similarity_score
from teleporter.idextract.backbone import Backbone
from teleporter.imageops.filters import center_crop_object
from teleporter.imageops.raster import BinaryMask, ImageBuffer, write_image
from teleporter.inference.conditioning import ConditioningConfig, stage
from teleporter.inference.pipeline import DEFAULT_SAMPLER_STEPS, teleport

log = logging.getLogger(__name__)

UNKNOWN_STAGE = "unknown"

REPORT_NOTE = (
    "Scores come from the {extractor} feature extractor. Values are comparable "
    "only between runs that use the same extractor, not with scores from "
    "pretrained CLIP or DINO features."
)


@dataclass(frozen=True)
class ScoreRecord:
    object_id: str
    scene_id: str
    proposal: int
    seed: int
    score: float
    image: str = ""


@dataclass(frozen=True)
class Failure:
    object_id: str
    scene_id: str
    proposal: int
    stage: str
    error: str


@dataclass
class SimilarityReport:
    scores: list[ScoreRecord]
    failures: list[Failure]
    extractor: str
    seed: int
    proposals: int
    object_count: int
    scene_count: int
    config: dict[str, object] = field(default_factory=dict)

    @property
    def expected_count(self) -> int:
        return self.object_count * self.scene_count * self.proposals

    @property
    def failure_count(self) -> int:
        return len(self.failures)

    @property
    def mean(self) -> float:
        if not self.scores:
            return float("nan")
        return math.fsum(r.score for r in self.scores) / len(self.scores)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.scores], columns=list(ScoreRecord.__dataclass_fields__))

    def group_means(self, column: str) -> dict[str, float]:
        frame = self.to_frame()
        if frame.empty:
            return {}
        return {str(k): float(v) for k, v in frame.groupby(column)["score"].mean().items()}

    def to_dict(self) -> dict[str, object]:
        return {
            "note": REPORT_NOTE.format(extractor=self.extractor),
            "extractor": self.extractor,
            "seed": self.seed,
            "proposals": self.proposals,
            "objects": self.object_count,
            "scenes": self.scene_count,
            "mean_score": self.mean if self.scores else None,
            "per_object": self.group_means("object_id"),
            "per_scene": self.group_means("scene_id"),
            "failure_count": self.failure_count,
            "failures": [asdict(f) for f in self.failures],
            "config": self.config,
            "scores": [asdict(r) for r in self.scores],
        }

    def write(self, run_dir: str | Path) -> tuple[Path, Path]:
        """``report.json`` and ``summary.csv`` under ``run_dir``."""
        directory = Path(run_dir)
        directory.mkdir(parents=True, exist_ok=True)
        report = directory / "report.json"
        report.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        summary = directory / "summary.csv"
        self.to_frame().to_csv(summary, index=False)
        return report, summary


@dataclass(frozen=True)
class _Subject:
    ident: str
    image: ImageBuffer
    mask: BinaryMask


def _first_frame(entry: ManifestEntry) -> tuple[ImageBuffer, BinaryMask]:
    if entry.modality is Modality.VIDEO:
        frame = load_clip(entry)[0]
        return frame.image, frame.masks[entry.instance_id]
    return load_still(entry)


def _subjects(manifest: Manifest, kind: str) -> list[_Subject]:
    if not manifest.entries:
        msg = f"The {kind} manifest is empty"
        raise EmptyDatasetError(msg)
    subjects = []
    for k, entry in enumerate(manifest.entries):
        image, mask = _first_frame(entry)
        subjects.append(_Subject(f"{k:03d}-{entry.instance_id}", image, mask))
    return subjects


def combination_seed(seed: int, object_index: int, scene_index: int, proposal: int) -> int:
    """Independent, reproducible seed per (object, scene, proposal)."""
    return int(np.random.SeedSequence([seed, object_index, scene_index, proposal]).generate_state(1)[0])


def run_benchmark(
    objects: Manifest,
    scenes: Manifest,
    model: DenoiserModel,
    *,
    proposals: int = 1,
    seed: int,
    run_dir: str | Path | None = None,
    sched: NoiseSchedule,
    steps: int = DEFAULT_SAMPLER_STEPS,
    conditioning: ConditioningConfig | None = None,
    backbone: Backbone | None = None,
    latent: LatentAdapter | None = None,
    extractor: FeatureExtractor | None = None,
    workers: int = 1,
    config: dict[str, object] | None = None,
    on_result: Callable[[ScoreRecord | Failure], None] | None = None,
) -> SimilarityReport:
    """Score every object in every scene's mask box, ``proposals`` seeds each.

    Failed combinations are recorded and the run continues. Generated images
    go to ``run_dir/images`` when a run directory is given.
    """
    if proposals < 1:
        msg = f"proposals must be at least 1, got {proposals}"
        raise InvalidArgumentError(msg)
    cfg = model.config
    backbone = backbone if backbone is not None else build_backbone(cfg)
    latent = latent if latent is not None else build_latent(cfg)
    extractor = extractor or BackboneExtractor(backbone, name="toy-backbone")
    object_subjects = _subjects(objects, "objects")
    scene_subjects = _subjects(scenes, "scenes")
    image_dir = Path(run_dir) / "images" if run_dir is not None else None

    jobs = [
        (oi, si, p)
        for oi in range(len(object_subjects))
        for si in range(len(scene_subjects))
        for p in range(proposals)
    ]

    def _run(job: tuple[int, int, int]) -> ScoreRecord | Failure:
        oi, si, p = job
        obj, scene = object_subjects[oi], scene_subjects[si]
        combo_seed = combination_seed(seed, oi, si, p)
        try:
            with stage("box"):
                box = scene.mask.bbox()
            generated = teleport(
                obj.image, obj.mask, scene.image, box,
                model=model, seed=combo_seed, sched=sched, steps=steps,
                conditioning=conditioning, backbone=backbone, latent=latent,
            )
            with stage("score"):
                target, _ = center_crop_object(obj.image, obj.mask)
                score = region_similarity_score(generated, box, target, extractor)
            image = ""
            if image_dir is not None:
                with stage("write"):
                    name = f"{obj.ident}__{scene.ident}__p{p}.png"
                    image = str(write_image(generated, image_dir / name))
        except StageError as exc:
            log.warning("Combination %s × %s #%d failed: %s", obj.ident, scene.ident, p, exc)
            return Failure(obj.ident, scene.ident, p, exc.stage, str(exc.cause))
        except Exception as exc:
            log.warning("Combination %s × %s #%d failed: %s", obj.ident, scene.ident, p, exc)
            error = f"{type(exc).__name__}: {exc}"
            return Failure(obj.ident, scene.ident, p, UNKNOWN_STAGE, error)
        return ScoreRecord(obj.ident, scene.ident, p, combo_seed, score, image)

    results: list[ScoreRecord | Failure] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_run, jobs):
                results.append(result)
                if on_result is not None:
                    on_result(result)
    else:
        for job in jobs:
            result = _run(job)
            results.append(result)
            if on_result is not None:
                on_result(result)

    report = SimilarityReport(
        scores=[r for r in results if isinstance(r, ScoreRecord)],
        failures=[r for r in results if isinstance(r, Failure)],
        extractor=extractor.name,
        seed=seed,
        proposals=proposals,
        object_count=len(object_subjects),
        scene_count=len(scene_subjects),
        config=dict(config or {}),
    )
    log.info(
        "Benchmark done: %d scores, %d failures, mean %.4f",
        len(report.scores), report.failure_count, report.mean,
    )
    if run_dir is not None:
        report.write(run_dir)
    return report
