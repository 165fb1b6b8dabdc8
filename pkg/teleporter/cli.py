"""teleporter CLI: typer commands over the library."""

from __future__ import annotations

import logging
from collections.abc import Iterator
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import NoReturn

import numpy as np
import pandas as pd
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, TextColumn, TimeElapsedColumn

from teleporter import __version__
from teleporter.config import RunConfig, runs_dir
from teleporter.errors import (
    ConfigError,
    EmptyObjectError,
    InvalidArgumentError,
    ManifestError,
    StageError,
    TeleportError,
)
from teleporter.imageops.filters import DEFAULT_EROSION_RADIUS

console = Console()
err_console = Console(stderr=True)
log = logging.getLogger("teleporter")

app = typer.Typer(
    name="teleporter",
    help="Teleport objects into scenes with a conditioned latent diffusion model.",
    add_completion=False,
    invoke_without_command=True,
    pretty_exceptions_enable=False,
)

VALIDATION_ERRORS = (
    InvalidArgumentError,
    ConfigError,
    EmptyObjectError,
    ManifestError,
    FileNotFoundError,
)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    return 2 if isinstance(exc, VALIDATION_ERRORS) else 1


def _fail(exc: BaseException) -> NoReturn:
    err_console.print(f"Error: {exc}", style="red", markup=False, highlight=False, soft_wrap=True)
    raise typer.Exit(_exit_code(exc))


@contextmanager
def _handled() -> Iterator[None]:
    try:
        yield
    except (TeleportError, OSError, ValueError) as exc:
        _fail(exc)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


def _stamp() -> str:
    return datetime.now().strftime("%Y%m%d-%H%M%S")


def _from_config(key: str) -> str:
    return f"{getattr(RunConfig, key)}, config key {key}"


@app.callback(invoke_without_command=True)
def default(
    ctx: typer.Context,
    version: bool = typer.Option(False, "--version", "-V", help="Show version"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
) -> None:
    """Teleport objects into scenes."""
    _setup_logging(verbose)
    if version:
        console.print(f"teleporter {__version__}")
        raise typer.Exit()
    if ctx.invoked_subcommand is None:
        typer.echo(ctx.get_help())


@app.command()
def hfmap(
    in_image: Path = typer.Argument(..., help="Object image (PNG)"),
    in_mask: Path = typer.Argument(..., help="Object mask (PNG, >127 is set)"),
    out_image: Path = typer.Argument(..., help="Where to write the high-frequency map"),
    radius: int = typer.Option(DEFAULT_EROSION_RADIUS, "--radius", "-r", help="Erosion radius"),
) -> None:
    """Write the high-frequency detail map of a masked object."""
    from teleporter.imageops.filters import high_frequency_map
    from teleporter.imageops.raster import read_image, read_mask, write_image

    with _handled():
        hf = high_frequency_map(read_image(in_image), read_mask(in_mask), radius)
        written = write_image(hf, out_image)
    console.print(f"Wrote [cyan]{written}[/cyan]")


@app.command()
def prepare(
    data_root: Path = typer.Argument(..., help="Dataset root with clips/ and/or stills/"),
    manifest_out: Path = typer.Argument(..., help="Output manifest (JSON lines)"),
) -> None:
    """Scan a dataset root into a manifest."""
    from teleporter.datapipe.manifest import build_manifest, write_manifest

    with _handled():
        manifest = build_manifest([data_root])
        written = write_manifest(manifest, manifest_out)
    counts = manifest.modality_counts()
    summary = ", ".join(f"{n} {m.value}" for m, n in counts.items())
    console.print(f"Wrote [cyan]{written}[/cyan]: {len(manifest)} entries ({summary})")


@app.command()
def train(
    config: Path | None = typer.Option(
        None, "--config", "-c", help="key = value config file", show_default="none"
    ),
    manifest: str | None = typer.Option(
        None, "--manifest", "-m", help="Training manifest", show_default="config key manifest"
    ),
    seed: int | None = typer.Option(
        None, "--seed", help="Run seed", show_default="required, config key seed"
    ),
    steps: int | None = typer.Option(
        None, "--steps", help="Train steps", show_default=_from_config("train_steps")
    ),
    lr: float | None = typer.Option(
        None, "--lr", help="Learning rate", show_default=_from_config("learning_rate")
    ),
    batch_size: int | None = typer.Option(
        None, "--batch-size", help="Batch size", show_default=_from_config("batch_size")
    ),
    workers: int | None = typer.Option(
        None, "--workers", help="Pair-building processes", show_default=_from_config("workers")
    ),
    output_dir: str | None = typer.Option(
        None, "--output-dir", "-o", help="Run directory",
        show_default="runs dir / train-<timestamp>",
    ),
    resume: str | None = typer.Option(
        None, "--resume", help="Checkpoint to continue from", show_default="fresh model"
    ),
) -> None:
    """Train the denoiser; writes checkpoints and loss.csv to the run directory."""
    from teleporter.datapipe.batches import iterate_batches
    from teleporter.datapipe.manifest import read_manifest
    from teleporter.diffusion.train import StepRecord, fit
    from teleporter.session import Session

    with _handled():
        cfg = RunConfig.load(
            config, manifest=manifest, seed=seed, train_steps=steps, learning_rate=lr,
            batch_size=batch_size, workers=workers, output_dir=output_dir, checkpoint=resume,
        )
        run_seed = cfg.require_seed("train")
        if not cfg.manifest:
            msg = "'train' needs a manifest: pass --manifest or set manifest in the config file"
            raise ConfigError(msg)
        data = read_manifest(cfg.manifest)
        session = Session.create(cfg)
        out_dir = Path(cfg.output_dir) if cfg.output_dir else runs_dir() / f"train-{_stamp()}"
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(session.config.to_text(), encoding="utf-8")
        log.info("Training from step %d: %s", session.step, session.summary())

        rng = np.random.default_rng([run_seed, session.step])
        batches = iterate_batches(
            data, cfg.batch_size, rng, epochs=None,
            settings=cfg.pair_settings(), workers=cfg.workers,
        )
        with Progress(
            TextColumn("[bold]train"), BarColumn(), TextColumn("{task.completed}/{task.total}"),
            TextColumn("loss {task.fields[loss]}"), TimeElapsedColumn(),
            console=console, transient=True,
        ) as progress:
            task = progress.add_task("train", total=cfg.train_steps, loss="-")

            def on_step(record: StepRecord) -> None:
                session.record(record)
                progress.update(task, advance=1, loss=f"{record.loss:.5f}")
                if session.step % cfg.checkpoint_every == 0:
                    session.save(out_dir / f"ckpt-{session.step:06d}.safetensors")

            try:
                records = fit(
                    batches, session.model, session.schedule, session.ensure_optimizer(),
                    steps=cfg.train_steps, start_step=session.step,
                    backbone=session.backbone, latent=session.latent,
                    conditioning=cfg.conditioning_config(), on_step=on_step,
                )
            finally:
                batches.close()

        loss_log = out_dir / "loss.csv"
        pd.DataFrame(
            [(r.step, r.loss, r.video_fraction, r.mean_timestep) for r in records],
            columns=["step", "loss", "video_fraction", "mean_timestep"],
        ).to_csv(loss_log, index=False)
        final = session.save(out_dir / "final.safetensors")
    console.print(f"Wrote [cyan]{final}[/cyan] and [cyan]{loss_log}[/cyan]")


@app.command()
def teleport(
    object_image: Path = typer.Argument(..., help="Object image (PNG)"),
    object_mask: Path = typer.Argument(..., help="Object mask (PNG)"),
    scene: Path = typer.Argument(..., help="Scene image (PNG)"),
    box: str = typer.Option(..., "--box", "-b", help="Target box x0,y0,x1,y1"),
    out: Path = typer.Option(..., "--out", "-o", help="Output PNG"),
    seed: int | None = typer.Option(
        None, "--seed", help="Sampling seed", show_default="required, config key seed"
    ),
    shape_mask: Path | None = typer.Option(
        None, "--shape-mask", help="Optional shape mask PNG", show_default="the box"
    ),
    checkpoint: str | None = typer.Option(
        None, "--checkpoint", help="Model checkpoint", show_default="fresh model"
    ),
    config: Path | None = typer.Option(
        None, "--config", "-c", help="key = value config file", show_default="none"
    ),
    steps: int | None = typer.Option(
        None, "--steps", help="Sampler steps", show_default=_from_config("sampler_steps")
    ),
) -> None:
    """Teleport an object into a scene box and write the composite."""
    from teleporter.imageops.raster import Box, read_image, read_mask, write_image
    from teleporter.inference.pipeline import teleport as run_teleport
    from teleporter.session import Session

    with _handled():
        cfg = RunConfig.load(config, seed=seed, checkpoint=checkpoint, sampler_steps=steps)
        run_seed = cfg.require_seed("teleport")
        target = Box.parse(box)
        obj_img, obj_mask = read_image(object_image), read_mask(object_mask)
        scene_img = read_image(scene)
        shape = read_mask(shape_mask) if shape_mask is not None else None
        session = Session.create(cfg)
        result = run_teleport(
            obj_img, obj_mask, scene_img, target, shape,
            model=session.model, seed=run_seed, sched=session.schedule,
            steps=session.config.sampler_steps, conditioning=cfg.conditioning_config(),
            backbone=session.backbone, latent=session.latent, feather=cfg.feather,
        )
        written = write_image(result, out)
    console.print(f"Wrote [cyan]{written}[/cyan]")


@app.command(name="eval")
def evaluate(
    config: Path | None = typer.Option(
        None, "--config", "-c", help="key = value config file", show_default="none"
    ),
    objects: str | None = typer.Option(
        None, "--objects", help="Objects manifest", show_default="config key objects_manifest"
    ),
    scenes: str | None = typer.Option(
        None, "--scenes", help="Scenes manifest (mask = box)",
        show_default="config key scenes_manifest",
    ),
    checkpoint: str | None = typer.Option(
        None, "--checkpoint", help="Model checkpoint", show_default="fresh model"
    ),
    proposals: int | None = typer.Option(
        None, "--proposals", help="Seeds per combination", show_default=_from_config("proposals")
    ),
    seed: int | None = typer.Option(
        None, "--seed", help="Run seed", show_default="required, config key seed"
    ),
    workers: int | None = typer.Option(
        None, "--workers", help="Parallel combinations", show_default=_from_config("workers")
    ),
    run_id: str | None = typer.Option(
        None, "--run-id", help="Run directory name under the runs dir",
        show_default="eval-<timestamp>",
    ),
) -> None:
    """Benchmark every object in every scene and write report.json + summary.csv."""
    from teleporter.datapipe.manifest import read_manifest
    from teleporter.evaluate.benchmark import run_benchmark
    from teleporter.session import Session

    with _handled():
        cfg = RunConfig.load(
            config, objects_manifest=objects, scenes_manifest=scenes, checkpoint=checkpoint,
            proposals=proposals, seed=seed, workers=workers,
        )
        run_seed = cfg.require_seed("eval")
        if not cfg.objects_manifest or not cfg.scenes_manifest:
            msg = "'eval' needs objects and scenes manifests (--objects/--scenes)"
            raise ConfigError(msg)
        object_manifest = read_manifest(cfg.objects_manifest)
        scene_manifest = read_manifest(cfg.scenes_manifest)
        session = Session.create(cfg)
        if cfg.output_dir:
            run_dir = Path(cfg.output_dir)
        else:
            run_dir = runs_dir() / (run_id or f"eval-{_stamp()}")
        report = run_benchmark(
            object_manifest, scene_manifest, session.model,
            proposals=cfg.proposals, seed=run_seed, run_dir=run_dir,
            sched=session.schedule, steps=session.config.sampler_steps,
            conditioning=cfg.conditioning_config(), backbone=session.backbone,
            latent=session.latent, workers=cfg.workers,
            config={k: str(v) for k, v in session.config.as_dict().items()},
        )
    console.print(
        f"{len(report.scores)}/{report.expected_count} scores, "
        f"mean [cyan]{report.mean:.4f}[/cyan], {report.failure_count} failed"
    )
    console.print(f"Report: [cyan]{run_dir / 'report.json'}[/cyan]")
    if report.failure_count:
        err_console.print(
            f"{report.failure_count} combination(s) failed; see report.json", style="yellow"
        )


@app.command(name="config")
def show_config(
    config: Path | None = typer.Option(
        None, "--config", "-c", help="key = value config file", show_default="none"
    ),
) -> None:
    """Show the resolved configuration."""

    with _handled():
        cfg = RunConfig.load(config)
    console.print("\n[bold]teleporter configuration[/bold]\n")
    cfg.show()
    console.print()


def main() -> None:
    app()
