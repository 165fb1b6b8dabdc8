from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from safetensors.torch import save_file

from teleporter.collage.stitch import CollageInput
from teleporter.datapipe.batches import Batch
from teleporter.datapipe.pairs import IDENTITY_AUGMENT, make_image_pair
from teleporter.diffusion.checkpoint import load_checkpoint, read_header, save_checkpoint
from teleporter.diffusion.latent import PoolingLatentAdapter
from teleporter.diffusion.model import (
    DenoiserConfig,
    DetailMaps,
    build_model,
    denoise,
    encode_details,
)
from teleporter.diffusion.sampler import initial_noise, sample, sampling_timesteps
from teleporter.diffusion.schedule import SCHEDULE_KINDS, add_noise, make_schedule
from teleporter.diffusion.train import (
    compute_loss,
    make_optimizer,
    prepare_batch,
    train_step,
    training_loss,
)
from teleporter.errors import ConfigError, InvalidArgumentError, NumericalDivergenceError
from teleporter.idextract.projector import IdTokens
from teleporter.imageops.raster import BinaryMask, Box, ImageBuffer

from conftest import square_frame

# ── Schedule ─────────────────────────────────────────────────────


@pytest.mark.parametrize("kind", SCHEDULE_KINDS)
@pytest.mark.parametrize("T", [10, 100, 1000])
def test_schedule_invariants(kind, T):
    sched = make_schedule(T, kind)
    assert sched.alpha[0] == 1.0 and sched.sigma[0] == 0.0
    assert np.all(np.diff(sched.alpha) <= 0)
    assert np.all(np.diff(sched.sigma) >= 0)
    assert np.max(np.abs(sched.alpha**2 + sched.sigma**2 - 1.0)) < 1e-9
    assert sched.alpha[-1] < 1.0


def test_linear_schedule_against_a_running_product():
    T = 1000
    product = 1.0
    for k in range(500):
        beta = 1e-4 + k * (0.02 - 1e-4) / (T - 2)
        product *= 1.0 - beta
    sched = make_schedule(T, "linear")
    assert sched.alpha[500] == pytest.approx(math.sqrt(product), rel=1e-9)
    assert sched.sigma[500] == pytest.approx(math.sqrt(1.0 - product), rel=1e-9)


def test_schedule_rejects_bad_arguments():
    with pytest.raises(InvalidArgumentError):
        make_schedule(1)
    with pytest.raises(InvalidArgumentError, match="Unknown schedule"):
        make_schedule(10, "sigmoid")


def test_add_noise_at_step_zero_is_the_identity():
    sched = make_schedule(100)
    x = torch.rand(2, 3, 4, 4)
    assert torch.equal(add_noise(x, torch.randn_like(x), 0, sched), x)


def test_add_noise_per_item_steps():
    sched = make_schedule(100)
    x = torch.ones(2, 3, 4, 4, dtype=torch.float64)
    eps = torch.full_like(x, 2.0)
    out = add_noise(x, eps, np.array([0, 99]), sched)
    assert torch.equal(out[0], x[0])
    expected = sched.alpha[99] + 2.0 * sched.sigma[99]
    torch.testing.assert_close(out[1], torch.full_like(x[1], expected))


def test_add_noise_validates():
    sched = make_schedule(100)
    x = torch.zeros(2, 3, 4, 4)
    with pytest.raises(InvalidArgumentError):
        add_noise(x, torch.zeros(2, 3, 4, 5), 1, sched)
    with pytest.raises(InvalidArgumentError):
        add_noise(x, x, 100, sched)
    with pytest.raises(InvalidArgumentError):
        add_noise(x, x, np.array([1, 2, 3]), sched)


def test_training_loss():
    assert training_loss(torch.ones(2, 3), torch.ones(2, 3)).item() == 0.0
    assert training_loss(torch.ones(2, 3), torch.zeros(2, 3)).item() == 1.0
    with pytest.raises(InvalidArgumentError):
        training_loss(torch.ones(2, 3), torch.ones(3, 2))


# ── Denoiser ─────────────────────────────────────────────────────


def _collage(side: int = 16, seed: int = 0) -> CollageInput:
    rng = np.random.default_rng(seed)
    box = Box(4, 4, 12, 12)
    return CollageInput(
        rgb=ImageBuffer(rng.random((side, side, 3))),
        shape=BinaryMask.from_box(side, side, box),
        box=box,
    )


def _tokens(width: int = 8, rows: int = 17, seed: int = 0) -> IdTokens:
    generator = torch.Generator().manual_seed(seed)
    return IdTokens(torch.randn(rows, width, generator=generator))


def test_config_validation():
    with pytest.raises(ConfigError):
        DenoiserConfig(image_side=18, latent_factor=2, stages=3)
    with pytest.raises(ConfigError):
        DenoiserConfig(latent_factor=3)
    with pytest.raises(ConfigError):
        DenoiserConfig(prediction="v")
    assert DenoiserConfig.from_json(DenoiserConfig().to_json()) == DenoiserConfig()


def test_detail_maps_start_at_zero(tiny_model, tiny_config):
    maps = encode_details(_collage(), tiny_model)
    assert maps.is_zero()
    shapes = [tuple(level.shape) for level in maps.levels]
    assert shapes == [(1, 8, 8, 8), (1, 16, 4, 4)]
    assert shapes == [tuple(level.shape) for level in DetailMaps.zeros(tiny_config).levels]


def test_detail_maps_reject_the_wrong_collage_size(tiny_model):
    with pytest.raises(InvalidArgumentError, match="16×16"):
        encode_details(_collage(side=24), tiny_model)


def test_denoise_shapes_and_zero_details(tiny_model):
    z = torch.randn(3, 8, 8, generator=torch.Generator().manual_seed(1))
    tokens = _tokens()
    with torch.no_grad():
        plain = denoise(z, 50, tokens, None, tiny_model)
        detailed = denoise(z, 50, tokens, encode_details(_collage(), tiny_model), tiny_model)
        batched = denoise(torch.stack([z, z]), torch.tensor([50, 50]), tokens, None, tiny_model)
    assert plain.shape == z.shape
    assert torch.equal(plain, detailed)
    assert batched.shape == (2, 3, 8, 8)
    torch.testing.assert_close(batched[1], plain)


def test_denoise_depends_on_the_id_tokens(tiny_model):
    z = torch.randn(3, 8, 8, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        a = denoise(z, 50, _tokens(seed=0), None, tiny_model)
        b = denoise(z, 50, _tokens(seed=1), None, tiny_model)
    assert not torch.allclose(a, b)


def test_denoise_validates_inputs(tiny_model):
    z = torch.zeros(3, 8, 8)
    with pytest.raises(InvalidArgumentError, match="cross-attention"):
        denoise(z, 1, _tokens(width=6), None, tiny_model)
    with pytest.raises(InvalidArgumentError, match="Latent"):
        denoise(torch.zeros(3, 6, 6), 1, _tokens(), None, tiny_model)


def test_parameter_partition(tiny_model):
    groups = tiny_model.partition()
    names = {name for name, _ in tiny_model.named_parameters()}
    assert set(groups["frozen"]) | set(groups["trainable"]) == names
    assert not set(groups["frozen"]) & set(groups["trainable"])
    assert all(name.startswith("encoder.") for name in groups["frozen"])
    assert {n.split(".", 1)[0] for n in groups["trainable"]} == {"decoder", "detail_encoder", "projector"}
    assert not any(p.requires_grad for p in tiny_model.frozen_parameters())
    assert all(p.requires_grad for p in tiny_model.trainable_parameters())


def test_build_model_is_seeded(tiny_config):
    a, b = build_model(tiny_config, seed=4), build_model(tiny_config, seed=4)
    for (name, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(pa, pb), name
    c = build_model(tiny_config, seed=5)
    assert not torch.equal(a.decoder.conv_out.weight, c.decoder.conv_out.weight)


# ── Training ─────────────────────────────────────────────────────


def _batch(count: int = 2, seed: int = 3) -> Batch:
    pairs = []
    for k in range(count):
        image, mask = square_frame(4 + 6 * k, 6)
        pairs.append(
            make_image_pair(
                image, mask, np.random.default_rng(k), augment=IDENTITY_AUGMENT, box_jitter=0.0
            )
        )
    return Batch(
        pairs=tuple(pairs), timesteps=np.array([10, 60, 30, 90][:count]), seed=seed, epoch=0
    )


def test_prepare_batch_shapes(tiny_model):
    prepared = prepare_batch(_batch(), tiny_model)
    assert prepared.latents.shape == (2, 3, 8, 8)
    assert prepared.collages.shape == (2, 4, 16, 16)
    assert len(prepared.backbone_outputs) == 2
    assert prepared.latents.min() >= -1.0 and prepared.latents.max() <= 1.0
    assert torch.equal(prepared.noise(), prepared.noise())


def test_training_updates_only_the_trainable_partition(tiny_model):
    sched = make_schedule(100)
    optimizer = make_optimizer(tiny_model, lr=1e-3)
    frozen = {n: p.detach().clone() for n, p in tiny_model.encoder.named_parameters()}
    groups = ("decoder", "detail_encoder", "projector")
    trainable = {
        g: [p.detach().clone() for p in getattr(tiny_model, g).parameters()] for g in groups
    }
    batch = _batch()

    for step in range(100):
        train_step(batch, tiny_model, sched, optimizer, step=step)

    for name, param in tiny_model.encoder.named_parameters():
        assert torch.equal(param, frozen[name]), name
    for group in groups:
        moved = sum(
            float((p.detach() - before).abs().sum())
            for p, before in zip(getattr(tiny_model, group).parameters(), trainable[group])
        )
        assert moved > 0.0, group


def test_optimizer_sees_only_trainable_parameters(tiny_model):
    optimizer = make_optimizer(tiny_model)
    ids = {id(p) for group in optimizer.param_groups for p in group["params"]}
    assert ids == {id(p) for p in tiny_model.trainable_parameters()}
    with pytest.raises(InvalidArgumentError):
        make_optimizer(tiny_model, lr=0.0)


def test_gradients_match_finite_differences(tiny_config):
    model = build_model(replace(tiny_config, dtype="float64"), seed=0)
    sched = make_schedule(100)
    prepared = prepare_batch(_batch(), model)
    noise = prepared.noise()

    model.zero_grad(set_to_none=True)
    compute_loss(prepared, model, sched, noise).backward()

    h = 1e-6
    for param in (model.projector.linear.weight, model.decoder.conv_out.weight):
        grad = param.grad.detach().flatten()
        picked = torch.nonzero(grad.abs() > 1e-3 * grad.abs().max()).flatten()[:5]
        assert len(picked) > 0
        flat = param.data.view(-1)
        for idx in picked.tolist():
            original = float(flat[idx])
            with torch.no_grad():
                flat[idx] = original + h
                up = float(compute_loss(prepared, model, sched, noise))
                flat[idx] = original - h
                down = float(compute_loss(prepared, model, sched, noise))
                flat[idx] = original
            numeric = (up - down) / (2 * h)
            assert numeric == pytest.approx(float(grad[idx]), rel=1e-3, abs=1e-9)


@pytest.mark.slow
def test_overfits_a_single_pair(tiny_model):
    sched = make_schedule(100)
    optimizer = make_optimizer(tiny_model, lr=2e-3)
    batch = _batch(count=1)
    losses = [train_step(batch, tiny_model, sched, optimizer, step=s) for s in range(200)]
    assert losses[-1] < 0.5 * losses[0]
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


def test_divergence_is_reported_with_the_step(tiny_model):
    with torch.no_grad():
        tiny_model.decoder.conv_out.bias.fill_(float("nan"))
    optimizer = make_optimizer(tiny_model)
    with pytest.raises(NumericalDivergenceError) as info:
        train_step(_batch(), tiny_model, make_schedule(100), optimizer, step=7)
    assert info.value.step == 7
    assert "step 7" in str(info.value)


# ── Sampling ─────────────────────────────────────────────────────


def test_sampling_timesteps():
    assert sampling_timesteps(1000, 1) == [999]
    assert sampling_timesteps(1000, 4) == [999, 749, 499, 249]
    assert sampling_timesteps(10, 10) == list(range(9, -1, -1))
    assert sampling_timesteps(1000, 50)[:3] == [999, 979, 959]
    with pytest.raises(InvalidArgumentError):
        sampling_timesteps(1000, 0)
    with pytest.raises(InvalidArgumentError):
        sampling_timesteps(10, 11)


def test_sample_is_deterministic_per_seed(tiny_model):
    sched = make_schedule(100)
    collage, tokens = _collage(), _tokens()
    a = sample(collage, tokens, tiny_model, sched, 3, seed=11)
    b = sample(collage, tokens, tiny_model, sched, 3, seed=11)
    c = sample(collage, tokens, tiny_model, sched, 3, seed=12)
    assert a.size == collage.size == (16, 16)
    assert a == b
    assert a != c
    assert a.pixels.min() >= 0.0 and a.pixels.max() <= 1.0


def test_single_step_sampling_is_one_prediction(tiny_model):
    sched = make_schedule(100)
    collage, tokens = _collage(seed=2), _tokens(seed=2)
    out = sample(collage, tokens, tiny_model, sched, 1, seed=5)

    tiny_model.eval()
    with torch.no_grad():
        z = initial_noise(tiny_model, 5)
        x_hat = denoise(z, 99, tokens, encode_details(collage, tiny_model), tiny_model)
        image = PoolingLatentAdapter(2).decode(x_hat.clamp(-1.0, 1.0))[0]
    expected = image.double().numpy().transpose(1, 2, 0)
    np.testing.assert_allclose(out.pixels, expected, atol=1e-7)


# ── Checkpoints ──────────────────────────────────────────────────


def test_checkpoint_round_trip(tiny_model, tmp_path):
    sched = make_schedule(100, "cosine")
    path = save_checkpoint(tiny_model, sched, tmp_path / "ckpt" / "model.safetensors", step=42)
    header = read_header(path)
    assert header["format"] == "teleporter-checkpoint"
    assert header["version"] == "1"

    loaded = load_checkpoint(path)
    assert loaded.step == 42
    assert loaded.model.config == tiny_model.config
    assert (loaded.schedule.T, loaded.schedule.kind) == (100, "cosine")
    np.testing.assert_array_equal(loaded.schedule.alpha, sched.alpha)
    original = tiny_model.state_dict()
    for name, value in loaded.model.state_dict().items():
        assert torch.equal(value, original[name]), name
    assert not any(p.requires_grad for p in loaded.model.frozen_parameters())


def test_checkpoint_header_is_checked(tmp_path):
    foreign = tmp_path / "foreign.safetensors"
    save_file({"x": torch.zeros(1)}, str(foreign), metadata={"format": "other"})
    with pytest.raises(ConfigError, match="not a teleporter checkpoint"):
        load_checkpoint(foreign)

    future = tmp_path / "future.safetensors"
    save_file(
        {"x": torch.zeros(1)}, str(future),
        metadata={"format": "teleporter-checkpoint", "version": "2"},
    )
    with pytest.raises(ConfigError, match="version"):
        load_checkpoint(future)

    garbage = tmp_path / "garbage.safetensors"
    garbage.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ConfigError):
        read_header(garbage)

    with pytest.raises(FileNotFoundError):
        read_header(tmp_path / "missing.safetensors")
