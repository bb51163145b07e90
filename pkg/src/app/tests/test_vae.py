import numpy as np
import pytest

from src.app.core.schemas import LangevinConfig, TrainConfig
from src.app.domain.entities.train_result import OptimizerState
from src.app.domain.errors import ConfigurationError
from src.app.domain.value_objects import LatentPair
from src.app.ml.config import preset
from src.app.ml.optim import SgdAscent
from src.app.services.training_service import train
from src.app.services.vae_service import elbo, encode, kl_divergence, reparameterize, vae_train_step


class _CapturingOptimizer:
    """Запоминает градиент и не меняет параметры."""

    def __init__(self):
        self.state = OptimizerState()
        self.gradient = None

    def step(self, params, gradient, learning_rate):
        self.gradient = dict(gradient)
        return params


@pytest.fixture
def vae_config():
    def _make(**overrides):
        base = dict(mode="vae", seed=2, max_displacement=1.0, record_timing=False, dtype="float64")
        base.update(overrides)
        return TrainConfig.create(**base)
    return _make


def test_kl_of_standard_normal_is_zero():
    assert kl_divergence(np.zeros((2, 3)), np.zeros((2, 3))).tolist() == [0.0, 0.0]


def test_kl_of_unit_mean_one_dimension():
    assert kl_divergence(np.array([[1.0]]), np.array([[0.0]]))[0] == pytest.approx(0.5)


def test_reparameterize_with_zero_noise_returns_mean():
    mu = np.array([[0.3, -1.2]])
    assert np.array_equal(reparameterize(mu, np.array([[2.0, -3.0]]), np.zeros((1, 2))), mu)


def test_encode_requires_encoder(arch8, make_params):
    with pytest.raises(ConfigurationError):
        encode(make_params(arch8), np.zeros((1, 8, 8, 3)))


def test_encode_returns_posterior_means(arch8, make_params):
    params = make_params(arch8, with_encoder=True)
    latents = encode(params, np.random.default_rng(0).uniform(size=(2, 8, 8, 3)))
    assert latents.appearance.shape == (2, arch8.d_a)
    assert latents.geometric.shape == (2, arch8.d_g)


@pytest.mark.parametrize("name", [
    "encoder.conv1.kernel", "encoder.fc1.weight", "encoder.fc1.bias",
    "appearance.deconv1.kernel", "geometric.fc1.weight",
])
def test_elbo_gradient_matches_finite_differences(name, arch8, make_params, vae_config, fd_check):
    params = make_params(arch8, seed=3, std=0.2, with_encoder=True)
    images = np.random.default_rng(3).uniform(size=(2, 8, 8, 3))
    cfg = vae_config()
    optimizer = _CapturingOptimizer()
    vae_train_step(images, params, cfg, optimizer, iteration=5)

    def objective(t):
        return elbo(params.with_tensors({name: t}), images, seed=cfg.seed, iteration=5)

    fd_check(objective, params.tensors[name], optimizer.gradient[name], np.random.default_rng(3), n=6)


def test_vae_step_updates_encoder_and_generator(arch8, make_params, vae_config):
    params = make_params(arch8, with_encoder=True)
    images = np.random.default_rng(1).uniform(size=(3, 8, 8, 3))
    updated, stats = vae_train_step(images, params, vae_config(learning_rate=1e-2), SgdAscent(), iteration=0)
    for name in ("encoder.fc1.weight", "appearance.fc1.weight", "geometric.fc1.weight"):
        assert not np.array_equal(updated.tensors[name], params.tensors[name]), name
    assert stats.kl_mean >= 0.0 and np.isfinite(stats.elbo_mean)


def test_vae_step_with_fixed_noise_is_reproducible(arch8, make_params, vae_config):
    params = make_params(arch8, with_encoder=True)
    images = np.random.default_rng(1).uniform(size=(2, 8, 8, 3))
    eps = LatentPair(np.zeros((2, arch8.d_a)), np.zeros((2, arch8.d_g)))
    a, _ = vae_train_step(images, params, vae_config(), SgdAscent(), iteration=0, eps=eps)
    b, _ = vae_train_step(images, params, vae_config(), SgdAscent(), iteration=9, eps=eps)
    for name in params.names():
        assert np.array_equal(a.tensors[name], b.tensors[name]), name


def test_vae_zero_displacement_keeps_geometric_net(arch8, make_params, vae_config):
    params = make_params(arch8, with_encoder=True).with_zero_displacement()
    images = np.random.default_rng(2).uniform(size=(2, 8, 8, 3))
    updated, _ = vae_train_step(images, params, vae_config(), SgdAscent(), iteration=0)
    for name in params.names("geometric"):
        assert np.array_equal(updated.tensors[name], params.tensors[name]), name


@pytest.mark.slow
def test_elbo_increases_during_training(synth_small):
    arch = preset("test16")
    data = synth_small(count=32, image_size=16, seed=4)
    cfg = TrainConfig.create(
        mode="vae",
        iterations=300,
        batch_size=32,
        learning_rate=3e-3,
        optimizer="adam",
        langevin=LangevinConfig(),
        seed=4,
        record_timing=False,
    )
    metrics = train(data, cfg, arch).metrics
    early = np.mean([m.log_joint_mean for m in metrics[:20]])
    late = np.mean([m.log_joint_mean for m in metrics[-20:]])
    assert late > early, (early, late)


@pytest.mark.slow
def test_zero_displacement_vae_reconstructs_like_appearance_only_vae(synth_small):
    """Без деформации декодер - один генератор внешнего вида; Z^g из одной координаты ничего не добавляет."""
    data = synth_small(count=32, image_size=16, seed=4)

    def final_mse(arch):
        cfg = TrainConfig.create(
            mode="vae",
            iterations=300,
            batch_size=32,
            learning_rate=3e-3,
            optimizer="adam",
            langevin=LangevinConfig(),
            seed=4,
            zero_displacement=True,
            record_timing=False,
        )
        return np.mean([m.mse for m in train(data, cfg, arch).metrics[-20:]])

    forced = final_mse(preset("test16"))
    appearance_only = final_mse(preset("test16", d_g=1))
    assert abs(forced - appearance_only) <= 0.2 * appearance_only, (forced, appearance_only)
