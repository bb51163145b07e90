import numpy as np
import pytest
from hypothesis import given, strategies as st

from src.app.core.schemas import LangevinConfig
from src.app.domain.entities.chain_store import ChainStore
from src.app.domain.enums import LatentKind
from src.app.domain.errors import DimensionError
from src.app.domain.value_objects import LatentPair
from src.app.ml.generators import DeformableGenerator
from src.app.services.inference_service import (
    InferenceService,
    alternating_inference,
    chain_warm_start,
    full_log_joint,
    langevin_step,
    log_joint,
)
from src.app.worker.pool import ChunkedPool


@pytest.fixture
def model(arch8, make_params):
    params = make_params(arch8, seed=2)
    return DeformableGenerator(arch8), params


@pytest.fixture
def observed(model, random_latents, arch8):
    """Изображения, сгенерированные моделью из известных латентов."""
    gen, params = model
    truth = random_latents(arch8, n=3, seed=11)
    return gen.model_forward(truth, params), truth


# log p(X, Z)
def test_log_joint_vanishes_at_exact_fit_with_zero_latent(model, arch8):
    gen, params = model
    latents = LatentPair(np.zeros((2, arch8.d_a)), np.random.default_rng(0).standard_normal((2, arch8.d_g)))
    images = gen.model_forward(latents, params)
    value, grad = log_joint(images, latents, params, LatentKind.APPEARANCE)
    assert np.allclose(value, 0.0, atol=1e-12)
    assert np.allclose(grad, 0.0, atol=1e-12)


def test_log_joint_value(model, observed, random_latents, arch8):
    gen, params = model
    images, _ = observed
    latents = random_latents(arch8, n=3, seed=4)
    residual = images - gen.model_forward(latents, params)
    expected = (
        -np.sum(residual ** 2, axis=(1, 2, 3)) / (2 * params.sigma ** 2)
        - 0.5 * np.sum(latents.geometric ** 2, axis=1)
    )
    value, _ = log_joint(images, latents, params, LatentKind.GEOMETRIC)
    assert np.allclose(value, expected, atol=1e-12)


@pytest.mark.parametrize("kind", list(LatentKind))
@given(seed=st.integers(0, 10_000))
def test_log_joint_gradient_matches_finite_differences(kind, seed, model, observed, random_latents, arch8, fd_check):
    _, params = model
    images, _ = observed
    latents = random_latents(arch8, n=3, seed=seed)
    _, grad = log_joint(images, latents, params, kind)

    def f(z):
        value, _ = log_joint(images, latents.replace(kind, z), params, kind)
        return value.sum()

    fd_check(f, latents.get(kind), grad, np.random.default_rng(seed), n=8, h=1e-6)


def test_log_joint_rejects_wrong_image_shape(model, arch8):
    _, params = model
    with pytest.raises(DimensionError):
        log_joint(np.zeros((1, 16, 16, 3)), LatentPair.zeros(1, arch8.d_a, arch8.d_g), params, LatentKind.APPEARANCE)


# Langevin step
def test_langevin_step_without_noise_is_drift():
    config = LangevinConfig(step_size=0.1, noise=False)
    out = langevin_step(np.array([[1.0]]), np.array([[2.0]]), config)
    assert out[0, 0] == pytest.approx(1.01)


def test_langevin_step_zero_gradient_keeps_latent():
    config = LangevinConfig(step_size=0.3, noise=False)
    z = np.array([[0.5, -1.0]])
    assert np.array_equal(langevin_step(z, np.zeros_like(z), config), z)


def test_langevin_step_adds_scaled_noise():
    config = LangevinConfig(step_size=0.2, noise=True)
    z = np.zeros((2, 3))
    eps = np.random.default_rng(9).standard_normal((2, 3))
    out = langevin_step(z, np.ones_like(z), config, np.random.default_rng(9))
    assert np.allclose(out, 0.5 * 0.04 + 0.2 * eps)


def test_langevin_step_per_row_streams():
    config = LangevinConfig(step_size=1.0, noise=True)
    streams = [np.random.default_rng(1), np.random.default_rng(2)]
    out = langevin_step(np.zeros((2, 4)), np.zeros((2, 4)), config, streams)
    assert np.allclose(out[1], np.random.default_rng(2).standard_normal(4))


def test_langevin_step_needs_generator_when_noisy():
    with pytest.raises(ValueError):
        langevin_step(np.zeros((1, 2)), np.zeros((1, 2)), LangevinConfig(noise=True))


def test_langevin_step_shape_mismatch():
    with pytest.raises(DimensionError):
        langevin_step(np.zeros((1, 2)), np.zeros((1, 3)), LangevinConfig(noise=False))


def test_step_size_annealing():
    config = LangevinConfig(step_size=0.2, step_size_final=0.1, steps=3)
    assert [config.step_size_at(r) for r in range(3)] == pytest.approx([0.2, 0.15, 0.1])
    assert config.step_size_at(4, rounds=5) == pytest.approx(0.1)
    assert LangevinConfig(step_size=0.2).step_size_at(7) == 0.2


@pytest.mark.parametrize("d", [1, 4])
def test_langevin_chains_sample_linear_gaussian_posterior(d):
    """
    F(Z) = A Z + b: апостериорное гауссово известно в явном виде.
    10000 независимых цепочек, 3000 шагов прогрева; сравнение моментов по последнему состоянию.
    """
    r = np.random.default_rng(d)
    d_obs, sigma, delta, chains = 3 + d, 1.0, 0.1, 10_000
    a = r.uniform(-1, 1, size=(d_obs, d))
    b = r.uniform(-1, 1, size=d_obs)
    x = r.uniform(-1, 1, size=d_obs)

    precision = a.T @ a / sigma ** 2 + np.eye(d)
    cov = np.linalg.inv(precision)
    mean = cov @ a.T @ (x - b) / sigma ** 2
    # стационарная ковариация дискретной цепочки: (P (I - delta^2 P / 4))^-1
    chain_cov = np.linalg.inv(precision @ (np.eye(d) - delta ** 2 * precision / 4))
    assert np.allclose(np.diag(chain_cov), np.diag(cov), rtol=0.05)

    config = LangevinConfig(step_size=delta, noise=True)
    noise = np.random.default_rng(100 + d)
    z = np.zeros((chains, d))
    for _ in range(3000):
        grad = (x - b - z @ a.T) @ a / sigma ** 2 - z
        z = langevin_step(z, grad, config, noise)

    var = np.diag(chain_cov)
    se_mean = np.sqrt(var / chains)
    se_var = var * np.sqrt(2.0 / (chains - 1))
    assert np.all(np.abs(z.mean(axis=0) - mean) <= 4 * se_mean)
    assert np.all(np.abs(z.var(axis=0, ddof=1) - var) <= 4 * se_var)


# alternating inference
def test_vanishing_step_keeps_start(model, observed, random_latents, arch8):
    _, params = model
    images, _ = observed
    start = random_latents(arch8, n=3, seed=8)
    config = LangevinConfig(step_size=1e-12, steps=5, noise=True)
    out = alternating_inference(images, start, params, config)
    assert np.allclose(out.appearance, start.appearance, atol=1e-9)
    assert np.allclose(out.geometric, start.geometric, atol=1e-9)


def test_noise_free_inference_increases_log_joint(model, observed, random_latents, arch8):
    gen, params = model
    images, _ = observed
    latents = random_latents(arch8, n=3, seed=12)
    config = LangevinConfig(step_size=0.01, steps=1, noise=False)
    values = [full_log_joint(images, latents, gen.model_forward(latents, params), params.sigma)]
    for _ in range(20):
        latents = alternating_inference(images, latents, params, config, generator=gen)
        values.append(full_log_joint(images, latents, gen.model_forward(latents, params), params.sigma))
    values = np.stack(values)
    assert np.all(np.diff(values, axis=0) >= -1e-10)
    assert np.all(values[-1] > values[0])


def test_inference_is_deterministic(model, observed, arch8):
    _, params = model
    images, _ = observed
    service = InferenceService(params, LangevinConfig(step_size=0.05, steps=4, seed=3))
    first = service.infer_unseen(images, ids=["a", "b", "c"], steps=4)
    second = service.infer_unseen(images, ids=["a", "b", "c"], steps=4)
    assert np.array_equal(first.appearance, second.appearance)
    assert np.array_equal(first.geometric, second.geometric)


def test_thread_count_does_not_change_results(model, observed):
    _, params = model
    images, _ = observed
    images = np.concatenate([images, images[::-1]])
    ids = [f"img-{i}" for i in range(len(images))]
    config = LangevinConfig(step_size=0.05, steps=3, seed=1)
    serial = InferenceService(params, config, ChunkedPool(threads=1, chunk_size=2)).infer_unseen(images, ids, steps=3)
    parallel = InferenceService(params, config, ChunkedPool(threads=3, chunk_size=2)).infer_unseen(images, ids, steps=3)
    assert np.array_equal(serial.appearance, parallel.appearance)
    assert np.array_equal(serial.geometric, parallel.geometric)


def test_unseen_inference_starts_at_prior_mode(model, observed):
    _, params = model
    images, _ = observed
    service = InferenceService(params, LangevinConfig(noise=False))
    out = service.infer_unseen(images, steps=0)
    assert not out.appearance.any() and not out.geometric.any()


def test_pool_chunks_cover_every_index_once():
    pool = ChunkedPool(threads=4, chunk_size=3)
    parts = pool.chunks(10)
    assert [p.start for p in parts] == [0, 3, 6, 9]
    assert pool.map_chunks(lambda p: list(range(10))[p], 10) == [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9]]


# persistent chains
def test_warm_start_draws_once_and_persists(arch8):
    store = ChainStore(arch8.d_a, arch8.d_g, seed=4)
    first = chain_warm_start(store, "cat-001")
    second = chain_warm_start(store, "cat-001")
    assert np.array_equal(first.appearance, second.appearance)
    assert len(store) == 1

    other = ChainStore(arch8.d_a, arch8.d_g, seed=4)
    assert np.array_equal(other.warm_start("cat-001").geometric, first.geometric)
    assert not np.array_equal(other.warm_start("cat-002").geometric, first.geometric)


def test_put_then_warm_start_reads_back(arch8):
    store = ChainStore(arch8.d_a, arch8.d_g)
    latents = LatentPair(np.ones((1, arch8.d_a)), np.full((1, arch8.d_g), 2.0))
    store.put("x", latents)
    got = store.warm_start("x")
    assert np.array_equal(got.appearance, latents.appearance.astype(np.float32))
    assert np.array_equal(got.geometric, latents.geometric.astype(np.float32))


def test_put_rejects_batches(arch8):
    store = ChainStore(arch8.d_a, arch8.d_g)
    with pytest.raises(ValueError):
        store.put("x", LatentPair.zeros(2, arch8.d_a, arch8.d_g))


def test_store_from_arrays_round_trip(arch8):
    store = ChainStore(arch8.d_a, arch8.d_g, seed=1)
    store.get_many(["b", "a", "c"])
    ids, z_a, z_g = store.as_arrays()
    restored = ChainStore.from_arrays(ids, z_a, z_g, seed=1)
    assert restored.ids() == ["b", "a", "c"]
    assert np.array_equal(restored.get_many(ids).appearance, store.get_many(ids).appearance)


def test_infer_batch_writes_chains_back(model, observed, arch8):
    _, params = model
    images, _ = observed
    store = ChainStore(arch8.d_a, arch8.d_g, seed=0, dtype=np.float64)
    service = InferenceService(params, LangevinConfig(step_size=0.05, steps=2, seed=0))
    ids = ["p", "q", "r"]
    before = store.get_many(ids)
    after = service.infer_batch(images, ids, store, iteration=0)
    assert np.array_equal(store.get_many(ids).appearance, after.appearance)
    assert not np.array_equal(before.appearance, after.appearance)
