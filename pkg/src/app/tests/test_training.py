import numpy as np
import pytest
from hypothesis import given, strategies as st

from src.app.core.schemas import LangevinConfig, TrainConfig
from src.app.domain.entities.dataset import Dataset
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.entities.train_result import OptimizerState
from src.app.domain.enums import LatentKind
from src.app.domain.errors import DataError, NumericError
from src.app.domain.value_objects import LatentPair
from src.app.infra.checkpoint import checkpoint_load
from src.app.infra.metrics_log import read_metrics
from src.app.infra.uow import DirectoryArtifacts
from src.app.ml.config import preset
from src.app.ml.generators import DeformableGenerator
from src.app.ml.init import init_model_params
from src.app.ml.optim import AdamAscent, SgdAscent, sgd_step
from src.app.services import training_service
from src.app.services.inference_service import reconstruction_term
from src.app.services.training_service import TrainingService, batch_indices, mc_gradient, train


@pytest.fixture
def train_config():
    def _make(**overrides):
        base = dict(
            iterations=4,
            batch_size=3,
            learning_rate=1e-3,
            optimizer="adam",
            langevin=LangevinConfig(step_size=0.05, steps=2, seed=3),
            seed=3,
            max_displacement=1.0,
            record_timing=False,
        )
        base.update(overrides)
        return TrainConfig.create(**base)
    return _make


def _assert_same_params(a: ModelParams, b: ModelParams, names=None):
    for name in names or a.names():
        assert np.array_equal(a.tensors[name], b.tensors[name]), name


# Monte-Carlo gradient
def test_mc_gradient_vanishes_on_exact_fit(arch8, make_params, random_latents):
    params = make_params(arch8)
    latents = random_latents(arch8, n=2)
    images = DeformableGenerator(arch8).model_forward(latents, params)
    grads = mc_gradient(images, latents, params)
    assert set(grads) == set(params.names())
    assert all(np.allclose(g, 0.0, atol=1e-12) for g in grads.values())


@pytest.mark.parametrize("name", ["appearance.deconv1.kernel", "geometric.fc1.weight", "geometric.deconv1.bias"])
@given(seed=st.integers(0, 10_000))
def test_mc_gradient_matches_finite_differences(name, seed, arch8, make_params, random_latents, fd_check):
    params = make_params(arch8, seed=seed)
    gen = DeformableGenerator(arch8)
    latents = random_latents(arch8, n=2, seed=seed)
    images = np.random.default_rng(seed).uniform(size=(2, 8, 8, 3))
    grads = mc_gradient(images, latents, params, generator=gen)

    def objective(t):
        output = gen.model_forward(latents, params.with_tensors({name: t}))
        return np.mean(reconstruction_term(images, output, params.sigma))

    fd_check(objective, params.tensors[name], grads[name], np.random.default_rng(seed), n=6, h=1e-6)


def test_duplicated_batch_gives_same_gradient(arch8, make_params, random_latents):
    params = make_params(arch8, seed=1)
    latents = random_latents(arch8, n=2, seed=1)
    images = np.random.default_rng(1).uniform(size=(2, 8, 8, 3))
    single = mc_gradient(images, latents, params)
    double = mc_gradient(
        np.concatenate([images, images]), LatentPair.concat([latents, latents]), params
    )
    for name in single:
        assert np.allclose(single[name], double[name], atol=1e-12), name


def test_mc_gradient_skips_frozen_branch(arch8, make_params, random_latents):
    params = make_params(arch8)
    latents = random_latents(arch8)
    grads = mc_gradient(np.zeros((1, 8, 8, 3)), latents, params, freeze=[LatentKind.GEOMETRIC])
    assert grads and all(n.startswith("appearance.") for n in grads)


def test_mc_gradient_rejects_empty_and_mismatched_batches(arch8, make_params):
    params = make_params(arch8)
    with pytest.raises(DataError):
        mc_gradient(np.zeros((0, 8, 8, 3)), LatentPair.zeros(1, 3, 3), params)
    with pytest.raises(DataError):
        mc_gradient(np.zeros((2, 8, 8, 3)), LatentPair.zeros(1, 3, 3), params)


# optimizers
def test_sgd_step_is_ascent(arch8):
    params = init_model_params(arch8, dtype=np.float64)
    name = "appearance.fc1.bias"
    params = params.with_tensors({name: np.ones_like(params.tensors[name])})
    out = sgd_step(params, {name: np.full_like(params.tensors[name], 2.0)}, 0.1)
    assert np.allclose(out.tensors[name], 1.2)
    _assert_same_params(out, params, [n for n in params.names() if n != name])


def test_sgd_zero_gradient_keeps_params(arch8):
    params = init_model_params(arch8)
    zero = {n: np.zeros_like(t) for n, t in params.tensors.items()}
    _assert_same_params(SgdAscent().step(params, zero, 0.5), params)


def test_adam_first_step_moves_by_learning_rate(arch8):
    params = init_model_params(arch8, dtype=np.float64)
    name = "geometric.fc1.bias"
    g = np.array([1.0, -3.0, 0.5] + [2.0] * (params.tensors[name].size - 3))
    adam = AdamAscent(state=OptimizerState())
    out = adam.step(params, {name: g}, 0.01)
    assert np.allclose(out.tensors[name] - params.tensors[name], 0.01 * np.sign(g), atol=1e-6)
    assert adam.state.step == 1 and name in adam.state.m


def test_step_learning_rate_schedule(train_config):
    cfg = train_config(learning_rate=0.1, lr_schedule="step", lr_step=10, lr_decay=0.5)
    assert cfg.learning_rate_at(0) == 0.1
    assert cfg.learning_rate_at(10) == pytest.approx(0.05)
    assert cfg.learning_rate_at(25) == pytest.approx(0.025)


def test_batch_indices_cover_each_epoch():
    seen = np.concatenate([batch_indices(10, 3, t, seed=0) for t in range(4)])
    assert sorted(seen.tolist()) == list(range(10))
    assert np.array_equal(batch_indices(10, 3, 0, seed=0), batch_indices(10, 3, 0, seed=0))
    assert np.array_equal(batch_indices(5, 64, 7, seed=0), np.arange(5))


# training loop
def test_zero_iterations_returns_initial_params(arch8, synth_small, train_config):
    cfg = train_config(iterations=0)
    result = train(synth_small(count=4), cfg, arch8)
    assert result.iteration == 0 and result.metrics == []
    _assert_same_params(result.params, init_model_params(arch8, seed=cfg.seed, max_displacement=1.0))


def test_training_is_deterministic(arch8, synth_small, train_config):
    data = synth_small(count=5)
    first = train(data, train_config(), arch8)
    second = train(data, train_config(), arch8)
    _assert_same_params(first.params, second.params)
    assert first.metrics == second.metrics


def test_metrics_record_every_iteration(arch8, synth_small, train_config, tmp_path):
    artifacts = DirectoryArtifacts(tmp_path)
    result = train(synth_small(count=5), train_config(iterations=3), arch8, artifacts=artifacts)
    frame = read_metrics(tmp_path / "metrics.csv")
    assert list(frame.columns) == ["iteration", "mse", "log_joint_mean", "wall_ms"]
    assert frame["iteration"].tolist() == [1, 2, 3]
    assert frame["mse"].tolist() == [m.mse for m in result.metrics]
    assert (frame["wall_ms"] == 0).all()


def test_frozen_geometry_is_bitwise_unchanged(arch8, synth_small, train_config):
    cfg = train_config(freeze=[LatentKind.GEOMETRIC])
    service = TrainingService(cfg)
    state = service.initial_state(arch8)
    before = state.params.copy()
    result = service.train(synth_small(count=5), state)
    _assert_same_params(result.params, before, before.names("geometric"))
    assert not np.array_equal(result.params.tensors["appearance.fc1.weight"], before.tensors["appearance.fc1.weight"])


def test_zero_displacement_leaves_geometric_net_alone(arch8, synth_small, train_config):
    service = TrainingService(train_config(zero_displacement=True))
    state = service.initial_state(arch8)
    before = state.params.copy()
    result = service.train(synth_small(count=4), state)
    assert result.params.zero_displacement
    _assert_same_params(result.params, before, before.names("geometric"))


def test_resume_matches_uninterrupted_run(arch8, synth_small, train_config, tmp_path):
    data = synth_small(count=5)
    cfg = train_config(iterations=6)
    full = train(data, cfg, arch8)

    train(data, train_config(iterations=3, checkpoint_every=3), arch8, artifacts=DirectoryArtifacts(tmp_path))
    resumed = checkpoint_load(tmp_path / "checkpoint.dgn")
    assert resumed.iteration == 3
    rest = train(data, cfg, arch8, resume=resumed)

    _assert_same_params(full.params, rest.params)
    assert full.metrics[3:] == rest.metrics


def test_numeric_failure_writes_diagnostic_checkpoint(arch8, synth_small, train_config, tmp_path, monkeypatch):
    def poisoned(images, latents, params, generator=None, freeze=()):
        return {n: np.full_like(t, np.nan) for n, t in params.tensors.items()}

    monkeypatch.setattr(training_service, "mc_gradient", poisoned)
    with pytest.raises(NumericError, match="diagnostic"):
        train(synth_small(count=4), train_config(), arch8, artifacts=DirectoryArtifacts(tmp_path))
    assert (tmp_path / "diagnostic.dgn").exists()
    assert checkpoint_load(tmp_path / "diagnostic.dgn").params.all_finite()


def test_diagnostic_checkpoint_holds_start_of_failed_iteration(arch8, synth_small, train_config, tmp_path, monkeypatch):
    """Сбой на второй итерации: цепочки, параметры и Adam в чекпойнте как после первой."""
    data = synth_small(count=5)
    clean = train(data, train_config(iterations=1), arch8)

    real = training_service.mc_gradient
    calls = []

    def poisoned_second_call(images, latents, params, generator=None, freeze=()):
        calls.append(1)
        grads = real(images, latents, params, generator=generator, freeze=freeze)
        if len(calls) == 1:
            return grads
        return {n: np.full_like(g, np.nan) for n, g in grads.items()}

    monkeypatch.setattr(training_service, "mc_gradient", poisoned_second_call)
    with pytest.raises(NumericError):
        train(data, train_config(), arch8, artifacts=DirectoryArtifacts(tmp_path))

    diag = checkpoint_load(tmp_path / "diagnostic.dgn")
    assert diag.iteration == 1
    _assert_same_params(diag.params, clean.params)
    assert diag.optimizer.step == clean.optimizer.step == 1
    for name, m in clean.optimizer.m.items():
        assert np.array_equal(diag.optimizer.m[name], m), name
    ids = diag.chains.ids()
    assert len(ids) == 5
    restored, expected = diag.chains.get_many(ids), clean.chains.get_many(ids)
    assert np.array_equal(restored.appearance, expected.appearance)
    assert np.array_equal(restored.geometric, expected.geometric)


def test_empty_dataset_is_rejected(arch8, train_config):
    with pytest.raises(DataError):
        train(Dataset(np.zeros((0, 8, 8, 3)), []), train_config(), arch8)


@pytest.mark.slow
def test_training_halves_reconstruction_error(synth_small):
    arch = preset("tiny")
    data = synth_small(count=64, image_size=32, seed=1)
    cfg = TrainConfig.create(
        iterations=200,
        batch_size=64,
        learning_rate=1e-2,
        optimizer="adam",
        langevin=LangevinConfig(step_size=0.05, steps=5, seed=1),
        seed=1,
        record_timing=False,
    )
    result = train(data, cfg, arch)
    first, last = result.metrics[0].mse, result.metrics[-1].mse
    assert last < 0.5 * first, (first, last)
