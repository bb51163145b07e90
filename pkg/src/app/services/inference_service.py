"""
Апостериорный вывод латентов: лог совместной плотности, шаг Ланжевена,
чередующийся вывод (Z^a при фиксированном Z^g, затем наоборот) и тёплый старт цепочек.
"""
import logging
from typing import Optional, Sequence, Union

import numpy as np

from src.app.core.schemas import LangevinConfig
from src.app.domain.entities.chain_store import ChainStore
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.enums import LatentKind
from src.app.domain.errors import DimensionError, NumericError
from src.app.domain.services.seeding import LANGEVIN_NOISE, example_key, rng_for
from src.app.domain.value_objects import LatentPair
from src.app.ml.generators import DeformableGenerator, GeneratorTrace
from src.app.worker.pool import ChunkedPool

log = logging.getLogger(__name__)

# шагов Ланжевена для изображений вне обучающей выборки
UNSEEN_STEPS = 300

RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]


def _check_images(images: np.ndarray, trace: GeneratorTrace) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.shape != trace.output.shape:
        raise DimensionError(f"observed images {images.shape} do not match generated {trace.output.shape}")
    return images


def reconstruction_term(images: np.ndarray, output: np.ndarray, sigma: float) -> np.ndarray:
    """-||X - F(Z)||^2 / (2 sigma^2) по примерам."""
    residual = images - output
    return -np.sum(residual * residual, axis=(1, 2, 3)) / (2.0 * sigma * sigma)


def log_joint(
    images: np.ndarray,
    latents: LatentPair,
    params: ModelParams,
    which: LatentKind,
    generator: Optional[DeformableGenerator] = None,
    trace: Optional[GeneratorTrace] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    log p(X, Z_sel) с точностью до констант и его градиент по Z_sel:
    -||X - F||^2 / (2 sigma^2) - ||Z_sel||^2 / 2. Возвращает (значения (N,), градиент (N, d)).
    """
    generator = generator or DeformableGenerator.for_params(params)
    if trace is None:
        trace = generator.forward(latents, params)
    images = _check_images(images, trace)

    z = latents.get(which)
    value = reconstruction_term(images, trace.output, params.sigma) - 0.5 * np.sum(z * z, axis=1)
    grads, _ = generator.backward(
        trace, params, (images - trace.output) / (params.sigma ** 2), wrt=(which,), need_param_grads=False
    )
    return value, grads[which] - z


def full_log_joint(images: np.ndarray, latents: LatentPair, output: np.ndarray, sigma: float) -> np.ndarray:
    z_a, z_g = latents.appearance, latents.geometric
    return (
        reconstruction_term(np.asarray(images), output, sigma)
        - 0.5 * np.sum(z_a * z_a, axis=1)
        - 0.5 * np.sum(z_g * z_g, axis=1)
    )


def _standard_normal(rng: RngLike, shape: tuple[int, ...], dtype) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape).astype(dtype, copy=False)
    # один поток на строку батча
    if len(rng) != shape[0]:
        raise DimensionError(f"{len(rng)} noise streams for a batch of {shape[0]}")
    return np.stack([r.standard_normal(shape[1:]) for r in rng]).astype(dtype, copy=False)


def langevin_step(
    z: np.ndarray,
    grad: np.ndarray,
    config: LangevinConfig,
    rng: Optional[RngLike] = None,
    step_size: Optional[float] = None,
) -> np.ndarray:
    """Z' = Z + (delta^2 / 2) * grad + delta * eps; без шума только дрейф."""
    z = np.asarray(z)
    grad = np.asarray(grad)
    if z.shape != grad.shape:
        raise DimensionError(f"langevin step: latent {z.shape} and gradient {grad.shape} differ")
    delta = config.step_size if step_size is None else step_size
    out = z + 0.5 * delta * delta * grad
    if config.noise:
        if rng is None:
            raise ValueError("noise-enabled Langevin step needs a random generator")
        out = out + delta * _standard_normal(rng, z.shape, z.dtype)
    return out.astype(z.dtype, copy=False)


def example_streams(seed: int, iteration: int, ids: Sequence[str]) -> list[np.random.Generator]:
    return [rng_for(seed, LANGEVIN_NOISE, iteration, example_key(e)) for e in ids]


def alternating_inference(
    images: np.ndarray,
    start: LatentPair,
    params: ModelParams,
    config: LangevinConfig,
    rng: Optional[RngLike] = None,
    steps: Optional[int] = None,
    generator: Optional[DeformableGenerator] = None,
) -> LatentPair:
    """
    steps раундов: шаг по Z^a при фиксированном Z^g, затем шаг по Z^g при фиксированном Z^a.
    Без rng шум берётся из потоков (seed, LANGEVIN_NOISE, 0, номер строки).
    """
    generator = generator or DeformableGenerator.for_params(params)
    images = np.asarray(images)
    rounds = config.steps if steps is None else int(steps)
    latents = start.astype(params.dtype)
    if config.noise and rng is None:
        rng = [rng_for(config.seed, LANGEVIN_NOISE, 0, i) for i in range(latents.size)]

    trace = generator.forward(latents, params)
    for r in range(rounds):
        delta = config.step_size_at(r, rounds)
        for kind in (LatentKind.APPEARANCE, LatentKind.GEOMETRIC):
            _, grad = log_joint(images, latents, params, kind, generator=generator, trace=trace)
            z = langevin_step(latents.get(kind), grad, config, rng, step_size=delta)
            if not np.all(np.isfinite(z)):
                raise NumericError(f"{kind} latent diverged at Langevin round {r} (step size {delta})")
            latents = latents.replace(kind, z)
            trace = generator.forward(latents, params, previous=trace, changed=kind)
    return latents


def chain_warm_start(store: ChainStore, example_id: str) -> LatentPair:
    return store.warm_start(example_id)


class InferenceService:
    """Вывод латентов по батчу с тёплым стартом из ChainStore и записью результата обратно."""

    def __init__(self, params: ModelParams, config: LangevinConfig, pool: Optional[ChunkedPool] = None):
        self.params = params
        self.config = config
        self.pool = pool or ChunkedPool()
        self.generator = DeformableGenerator.for_params(params)

    def _run(self, images: np.ndarray, start: LatentPair, streams, steps: Optional[int]) -> LatentPair:
        def chunk(part: slice) -> LatentPair:
            idx = np.arange(start.size)[part]
            rng = None if streams is None else [streams[i] for i in idx]
            return alternating_inference(
                images[part], start.take(idx), self.params, self.config,
                rng=rng, steps=steps, generator=self.generator,
            )

        return LatentPair.concat(self.pool.map_chunks(chunk, start.size))

    def infer_batch(
        self,
        images: np.ndarray,
        ids: Sequence[str],
        store: ChainStore,
        iteration: int,
    ) -> LatentPair:
        """Вывод внутри итерации обучения: тёплый старт, config.steps раундов, запись в store."""
        start = store.get_many(ids)
        streams = example_streams(self.config.seed, iteration, ids) if self.config.noise else None
        latents = self._run(np.asarray(images), start, streams, steps=None)
        store.put_many(ids, latents)
        return latents

    def infer_unseen(
        self,
        images: np.ndarray,
        ids: Optional[Sequence[str]] = None,
        steps: int = UNSEEN_STEPS,
        start: Optional[LatentPair] = None,
    ) -> LatentPair:
        """Новые изображения: старт из нуля (мода априорного), steps раундов."""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        n = images.shape[0]
        ids = list(ids) if ids is not None else [f"unseen-{i}" for i in range(n)]
        arch = self.params.architecture
        if start is None:
            start = LatentPair.zeros(n, arch.d_a, arch.d_g, dtype=self.params.dtype)
        streams = example_streams(self.config.seed, 0, ids) if self.config.noise else None
        log.debug("inferring %d unseen images with %d Langevin rounds", n, steps)
        return self._run(images, start, streams, steps=steps)
