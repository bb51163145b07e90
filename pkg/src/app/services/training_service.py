"""
Обучение чередующимся обратным распространением.
Каждая итерация: вывод латентов Ланжевеном с тёплым стартом, затем шаг по theta
по Монте-Карло оценке градиента лог-правдоподобия. В режиме VAE вместо этого совместный шаг по ELBO.
"""
import logging
import time
from typing import Mapping, Optional, Sequence

import numpy as np

from src.app.core.schemas import ArchitectureConfig, TrainConfig
from src.app.domain.contracts.uow import RunArtifacts
from src.app.domain.entities.chain_store import ChainStore
from src.app.domain.entities.dataset import Dataset
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.entities.train_result import MetricsRecord, TrainResult
from src.app.domain.enums import LatentKind, TrainMode
from src.app.domain.errors import DataError, NumericError
from src.app.domain.services.seeding import BATCH_ORDER, rng_for
from src.app.domain.value_objects import LatentPair
from src.app.ml.encoder import Encoder
from src.app.ml.generators import DeformableGenerator
from src.app.ml.init import init_model_params
from src.app.ml.optim import make_optimizer
from src.app.services.inference_service import InferenceService, full_log_joint
from src.app.services.vae_service import vae_train_step
from src.app.worker.pool import ChunkedPool

log = logging.getLogger(__name__)

LATEST = "checkpoint"
DIAGNOSTIC = "diagnostic"


def mc_gradient(
    images: np.ndarray,
    latents: LatentPair,
    params: ModelParams,
    generator: Optional[DeformableGenerator] = None,
    freeze: Sequence[LatentKind] = (),
) -> dict[str, np.ndarray]:
    """
    (1/N) sum_i (1/sigma^2) (X_i - F(Z_i)) dF/dtheta при фиксированных латентах.
    Для замороженных ветвей градиент не считается.
    """
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[0] == 0:
        raise DataError(f"mc_gradient needs a non-empty batch, got images of shape {images.shape}")
    if latents.size != images.shape[0]:
        raise DataError(f"{latents.size} latent pairs for {images.shape[0]} images")
    generator = generator or DeformableGenerator.for_params(params)

    trace = generator.forward(latents, params)
    n = images.shape[0]
    grad_out = (images - trace.output) / (params.sigma ** 2 * n)
    wrt = [k for k in (LatentKind.APPEARANCE, LatentKind.GEOMETRIC) if k not in set(freeze)]
    _, grads = generator.backward(trace, params, grad_out, wrt=wrt, need_param_grads=True)
    return grads


def batch_indices(n: int, batch_size: int, iteration: int, seed: int) -> np.ndarray:
    """Минибатч итерации: перестановка эпохи из потока (seed, BATCH_ORDER, epoch)."""
    if batch_size >= n:
        return np.arange(n)
    per_epoch = -(-n // batch_size)
    epoch, pos = divmod(iteration, per_epoch)
    order = rng_for(seed, BATCH_ORDER, epoch).permutation(n)
    return order[pos * batch_size:(pos + 1) * batch_size]


class TrainingService:
    def __init__(
        self,
        config: TrainConfig,
        pool: Optional[ChunkedPool] = None,
        artifacts: Optional[RunArtifacts] = None,
    ):
        self.config = config
        self.pool = pool or ChunkedPool()
        self.artifacts = artifacts

    def initial_state(self, architecture: ArchitectureConfig) -> TrainResult:
        cfg = self.config
        params = init_model_params(
            architecture,
            seed=cfg.seed,
            sigma=cfg.sigma,
            max_displacement=cfg.max_displacement,
            dtype=np.dtype(cfg.dtype),
            with_encoder=cfg.mode == TrainMode.VAE,
        )
        if cfg.zero_displacement:
            params = params.with_zero_displacement()
        chains = ChainStore(architecture.d_a, architecture.d_g, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
        return TrainResult(params=params, chains=chains, seed=cfg.seed, mode=cfg.mode)

    def _save(self, name: str, state: TrainResult):
        if self.artifacts is None or self.artifacts.checkpoints is None:
            return None
        return self.artifacts.checkpoints.save(name, state)

    def _record(self, record: MetricsRecord) -> None:
        if self.artifacts is None:
            return
        if self.artifacts.metrics is not None:
            self.artifacts.metrics.append(record)
        if self.artifacts.tracker is not None:
            self.artifacts.tracker.log_metrics(record)

    def _abort(self, state: TrainResult, iteration: int, reason: str) -> NumericError:
        path = self._save(DIAGNOSTIC, state)
        log.error("training aborted at iteration %d: %s; diagnostic checkpoint: %s", iteration, reason, path)
        where = f" (diagnostic checkpoint {path})" if path is not None else ""
        return NumericError(f"iteration {iteration}: {reason}{where}")

    def _abp_iteration(self, state: TrainResult, images, ids, t, optimizer, generator) -> tuple[ModelParams, float, float]:
        cfg = self.config
        inference = InferenceService(state.params, cfg.langevin, pool=self.pool)
        latents = inference.infer_batch(images, ids, state.chains, iteration=t)

        output = generator.model_forward(latents, state.params)
        residual = images - output
        mse = float(np.mean(residual * residual))
        log_joint_mean = float(np.mean(full_log_joint(images, latents, output, state.params.sigma)))
        if not (np.isfinite(mse) and np.isfinite(log_joint_mean)):
            raise NumericError("non-finite reconstruction loss")

        grads = mc_gradient(images, latents, state.params, generator=generator, freeze=cfg.freeze)
        return optimizer.step(state.params, grads, cfg.learning_rate_at(t)), mse, log_joint_mean

    def train(self, dataset: Dataset, state: TrainResult) -> TrainResult:
        """Итерации state.iteration .. config.iterations; state изменяется на месте и возвращается."""
        cfg = self.config
        if len(dataset) == 0:
            raise DataError("training dataset is empty")
        dtype = state.params.dtype
        images_all = dataset.images.astype(dtype, copy=False)
        generator = DeformableGenerator.for_params(state.params)
        encoder = Encoder(state.params.architecture) if cfg.mode == TrainMode.VAE else None
        optimizer = make_optimizer(cfg, state.optimizer)

        if self.artifacts is not None and self.artifacts.tracker is not None:
            self.artifacts.tracker.log_params(cfg.to_json_dict())

        for t in range(state.iteration, cfg.iterations):
            started = time.perf_counter()
            idx = batch_indices(len(dataset), cfg.batch_size, t, cfg.seed)
            images = images_all[idx]
            ids = [dataset.ids[i] for i in idx]

            # состояние начала итерации: диагностический чекпойнт не смешивает t и t + 1
            chains_before = state.chains.get_many(ids) if cfg.mode == TrainMode.ABP else None
            optimizer_before = state.optimizer.copy()
            try:
                if cfg.mode == TrainMode.VAE:
                    params, stats = vae_train_step(
                        images, state.params, cfg, optimizer, t, generator=generator, encoder=encoder
                    )
                    mse, objective = stats.mse, stats.elbo_mean
                else:
                    params, mse, objective = self._abp_iteration(state, images, ids, t, optimizer, generator)
                if not params.all_finite():
                    raise NumericError("parameters became non-finite after the update")
            except NumericError as e:
                if chains_before is not None:
                    state.chains.put_many(ids, chains_before)
                state.optimizer = optimizer_before
                raise self._abort(state, t + 1, str(e)) from e

            state.params = params
            state.iteration = t + 1
            state.optimizer = optimizer.state
            wall_ms = (time.perf_counter() - started) * 1000.0 if cfg.record_timing else 0.0
            record = MetricsRecord(iteration=t + 1, mse=mse, log_joint_mean=objective, wall_ms=wall_ms)
            state.metrics.append(record)
            self._record(record)

            if (t + 1) % cfg.log_every == 0 or t + 1 == cfg.iterations:
                log.info("iteration %d: mse=%.6f log_joint_mean=%.4f", t + 1, mse, objective)
            if cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0:
                self._save(LATEST, state)

        return state


def train(
    dataset: Dataset,
    config: TrainConfig,
    architecture: ArchitectureConfig,
    resume: Optional[TrainResult] = None,
    pool: Optional[ChunkedPool] = None,
    artifacts: Optional[RunArtifacts] = None,
) -> TrainResult:
    service = TrainingService(config, pool=pool, artifacts=artifacts)
    state = resume if resume is not None else service.initial_state(architecture)
    return service.train(dataset, state)
