from __future__ import annotations

import pytest
import torch

from teleporter.collage.stitch import CollageMode
from teleporter.config import RUNS_ENV, RunConfig, parse_config_file, runs_dir
from teleporter.diffusion.train import StepRecord
from teleporter.errors import ConfigError
from teleporter.session import Session


def test_file_values_are_coerced(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "batch_size = 8   # trailing comment\n"
        "learning_rate = 3e-4\n"
        "remove_background = no\n"
        "downsample_ratios = 0.5, 0.25\n"
        "seed = 12\n"
        "collage_mode = shuffle\n",
        encoding="utf-8",
    )
    values = parse_config_file(path)
    assert values == {
        "batch_size": 8,
        "learning_rate": 3e-4,
        "remove_background": False,
        "downsample_ratios": (0.5, 0.25),
        "seed": 12,
        "collage_mode": "shuffle",
    }
    cfg = RunConfig.load(path)
    assert cfg.conditioning_config().collage_mode is CollageMode.SHUFFLE
    assert cfg.shape_config().downsample_ratios == (0.5, 0.25)


def test_overrides_win_and_none_is_ignored(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("batch_size = 8\nseed = 1\n", encoding="utf-8")
    cfg = RunConfig.load(path, batch_size=2, seed=None)
    assert cfg.batch_size == 2
    assert cfg.seed == 1


@pytest.mark.parametrize(
    ("text", "fragment"),
    [
        ("colour = blue\n", "unknown config key"),
        ("batch_size = many\n", "expects int"),
        ("remove_background = perhaps\n", "expects bool"),
        ("just words\n", "expected 'key = value'"),
        ("timesteps = 100\n", "boundary"),
        ("schedule = sigmoid\n", "Unknown schedule"),
        ("sampler_steps = 0\n", "sampler_steps"),
        ("image_side = 30\n", "image_side"),
    ],
)
def test_bad_files_raise_config_errors(tmp_path, text, fragment):
    path = tmp_path / "bad.cfg"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError, match=fragment):
        RunConfig.load(path)


def test_missing_file_and_unknown_override(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "absent.cfg")
    with pytest.raises(ConfigError, match="Unknown config keys: colour"):
        RunConfig.load(colour="blue")


def test_text_form_reads_back(tmp_path):
    cfg = RunConfig(seed=4, batch_size=3, remove_background=False, manifest="data/m.jsonl")
    path = tmp_path / "config.txt"
    path.write_text(cfg.to_text(), encoding="utf-8")
    assert RunConfig.load(path) == cfg


def test_seed_is_required_where_asked():
    with pytest.raises(ConfigError, match="'eval' needs a seed"):
        RunConfig().require_seed("eval")
    assert RunConfig(seed=0).require_seed("eval") == 0


def test_adaptive_timesteps_switch():
    assert RunConfig(adaptive_timesteps=False).timestep_config().early_boost == 0.0
    assert RunConfig().timestep_config().early_boost == 0.5


def test_runs_dir_honours_the_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(RUNS_ENV, str(tmp_path / "elsewhere"))
    assert runs_dir() == tmp_path / "elsewhere"
    monkeypatch.delenv(RUNS_ENV)
    assert runs_dir().name == "runs"


# ── Session ──────────────────────────────────────────────────────


def test_session_round_trip_through_a_checkpoint(tiny_config_file, tmp_path):
    cfg = RunConfig.load(tiny_config_file())
    session = Session.create(cfg)
    assert session.step == 0
    session.record(StepRecord(step=6, loss=0.5, video_fraction=1.0, mean_timestep=12.0))
    assert session.step == 7
    assert "last loss 0.50000" in session.summary()

    path = session.save(tmp_path / "s.safetensors")
    restored = Session.create(cfg.with_overrides(checkpoint=str(path)))
    assert restored.step == 7
    assert restored.model.config == session.model.config
    assert restored.schedule.T == 100


def test_checkpoint_schedule_overrides_the_config(tiny_config_file, tmp_path):
    session = Session.create(RunConfig.load(tiny_config_file()))
    path = session.save(tmp_path / "s.safetensors")

    restored = Session.from_checkpoint(path, RunConfig())
    assert restored.config.timesteps == 100
    assert restored.config.boundary == 50
    assert restored.config.sampler_steps == 50
    assert restored.config.image_side == 16
    assert restored.config.denoiser_config() == restored.model.config
    assert restored.schedule.kind == "linear"


def _one_adam_step(session: Session) -> None:
    optimizer = session.ensure_optimizer()
    loss = sum((p**2).sum() for p in session.model.trainable_parameters())
    loss.backward()
    optimizer.step()
    optimizer.zero_grad()


def test_resume_restores_the_adam_moments(tiny_config_file, tmp_path):
    cfg = RunConfig.load(tiny_config_file())
    session = Session.create(cfg)
    _one_adam_step(session)
    path = session.save(tmp_path / "s.safetensors")
    assert (tmp_path / "s.optim.pt").exists()

    restored = Session.create(cfg.with_overrides(checkpoint=str(path), learning_rate=0.01))
    optimizer = restored.ensure_optimizer()
    before = session.optimizer.state_dict()["state"]
    after = optimizer.state_dict()["state"]
    assert before.keys() == after.keys()
    for key, state in before.items():
        assert torch.equal(after[key]["exp_avg"], state["exp_avg"])
        assert torch.equal(after[key]["exp_avg_sq"], state["exp_avg_sq"])
        assert float(after[key]["step"]) == 1.0
    assert all(group["lr"] == 0.01 for group in optimizer.param_groups)


def test_checkpoint_without_optimizer_state_starts_fresh_moments(tiny_config_file, tmp_path):
    cfg = RunConfig.load(tiny_config_file())
    path = Session.create(cfg).save(tmp_path / "s.safetensors")
    assert not (tmp_path / "s.optim.pt").exists()

    restored = Session.create(cfg.with_overrides(checkpoint=str(path)))
    assert restored.optimizer_state is None
    assert restored.ensure_optimizer().state_dict()["state"] == {}
