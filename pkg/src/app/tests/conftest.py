import os

import hypothesis
import numpy as np
import pytest

from src.app.core.schemas import SynthSpec
from src.app.domain.value_objects import LatentPair
from src.app.infra.synth import synth_generate
from src.app.ml.config import preset
from src.app.ml.init import init_model_params

# фикстуры-фабрики без состояния: одни и те же экземпляры на все примеры hypothesis
SHARED_FIXTURES = [hypothesis.HealthCheck.function_scoped_fixture]
hypothesis.settings.register_profile("ci", max_examples=20, deadline=None, suppress_health_check=SHARED_FIXTURES)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None, suppress_health_check=SHARED_FIXTURES)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(autouse=True)
def _test_env(monkeypatch):
    # тесты не должны писать в mlflow или в чужой каталог
    monkeypatch.delenv("DGN_MLFLOW_TRACKING_URI", raising=False)
    monkeypatch.delenv("DGN_OUT_DIR", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def arch8():
    return preset("test8")


@pytest.fixture
def arch16():
    return preset("test16")


@pytest.fixture
def make_params():
    """
    float64 параметры со смещениями и заметным std, чтобы все ветви и активации работали
    в проверках конечными разностями.
    """
    def _make(arch, seed: int = 0, std: float = 0.3, max_displacement: float = 1.0,
              sigma: float = 0.3, with_encoder: bool = False, dtype=np.float64):
        params = init_model_params(
            arch, seed=seed, sigma=sigma, max_displacement=max_displacement,
            dtype=dtype, with_encoder=with_encoder, std=std,
        )
        r = np.random.default_rng(seed + 100)
        biased = {
            name: (0.1 * r.standard_normal(t.shape)).astype(dtype)
            for name, t in params.tensors.items() if name.endswith(".bias")
        }
        return params.with_tensors(biased)
    return _make


@pytest.fixture
def random_latents():
    def _make(arch, n: int = 1, seed: int = 0, dtype=np.float64) -> LatentPair:
        r = np.random.default_rng(seed)
        return LatentPair(
            appearance=r.standard_normal((n, arch.d_a)).astype(dtype),
            geometric=r.standard_normal((n, arch.d_g)).astype(dtype),
        )
    return _make


@pytest.fixture
def synth_small():
    def _make(count: int = 8, image_size: int = 8, seed: int = 0, **kwargs):
        return synth_generate(SynthSpec.create(count=count, image_size=image_size, seed=seed, **kwargs))
    return _make


@pytest.fixture
def fd_check():
    """
    Сверяет аналитический градиент скалярной f(x) с центральными разностями
    в n случайных координатах x: |a - n| <= rtol * max(|a|, |n|) + atol.
    """
    def _check(f, x: np.ndarray, analytic: np.ndarray, rng, n: int = 10,
               h: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-7):
        x = np.array(x, dtype=np.float64)
        analytic = np.asarray(analytic)
        assert analytic.shape == x.shape, (analytic.shape, x.shape)
        flat = rng.choice(x.size, size=min(n, x.size), replace=False)
        for k in flat:
            idx = np.unravel_index(k, x.shape)
            xp = x.copy()
            xm = x.copy()
            xp[idx] += h
            xm[idx] -= h
            numeric = (f(xp) - f(xm)) / (2 * h)
            a = analytic[idx]
            assert abs(a - numeric) <= rtol * max(abs(a), abs(numeric)) + atol, (idx, a, numeric)
    return _check
