"""
Процедуры анализа распутывания: проходы по измерению латента, перестановка
латентов между изображениями, ковариационные отклики, ошибка реконструкции,
дообучение с замороженной геометрией и перенос деформаций на внешние изображения.
"""
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from src.app.core.schemas import LangevinConfig, TrainConfig
from src.app.domain.entities.chain_store import ChainStore
from src.app.domain.entities.dataset import Dataset
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.entities.train_result import TrainResult
from src.app.domain.enums import LatentKind, PixelScale
from src.app.domain.errors import DataError, DegenerateFactorError, DimensionError, ResizeRequiredError
from src.app.domain.value_objects import CovarianceReport, DisplacementField, LatentPair, ReconstructionReport, SweepSpec
from src.app.ml.generators import DeformableGenerator
from src.app.ml.init import reinit_branch
from src.app.ml.warp import warp
from src.app.services.inference_service import UNSEEN_STEPS, InferenceService
from src.app.services.training_service import TrainingService
from src.app.services.vae_service import encode
from src.app.worker.pool import ChunkedPool

log = logging.getLogger(__name__)

PIXEL_SCALE = {PixelScale.UNIT: 1.0, PixelScale.BYTE: 255.0}


def _dim(params: ModelParams, kind: LatentKind) -> int:
    arch = params.architecture
    return arch.d_a if kind == LatentKind.APPEARANCE else arch.d_g


def sweep_latents(params: ModelParams, spec: SweepSpec) -> LatentPair:
    """steps + 1 пар: измерение dim проходит [-gamma, gamma], остальные координаты 0."""
    d = _dim(params, spec.vector)
    if spec.dim >= d:
        raise DimensionError(f"sweep dimension {spec.dim} out of range for a {spec.vector} latent of length {d}")
    values = spec.values()
    swept = np.zeros((values.size, d), dtype=params.dtype)
    swept[:, spec.dim] = values

    other = LatentKind.GEOMETRIC if spec.vector == LatentKind.APPEARANCE else LatentKind.APPEARANCE
    d_other = _dim(params, other)
    comp = np.zeros(d_other) if spec.complementary is None else np.asarray(spec.complementary).reshape(-1)
    if comp.size != d_other:
        raise DimensionError(f"complementary {other} latent has length {comp.size}, expected {d_other}")
    fixed = np.broadcast_to(comp.astype(params.dtype), (values.size, d_other)).copy()

    if spec.vector == LatentKind.APPEARANCE:
        return LatentPair(appearance=swept, geometric=fixed)
    return LatentPair(appearance=fixed, geometric=swept)


def interpolate_dimension(params: ModelParams, spec: SweepSpec) -> list[np.ndarray]:
    """
    Изображения вдоль одного измерения: z[dim] от -gamma до +gamma за spec.steps шагов, остальные
    координаты этого латента нули. Дополняющий латент (Z^a при геометрическом свипе и наоборот)
    берётся из spec.complementary, а без него равен нулю, т.е. моде априорного.
    """
    generator = DeformableGenerator.for_params(params)
    return list(generator.model_forward(sweep_latents(params, spec), params))


def sample_complementary(rng: np.random.Generator, d: int) -> np.ndarray:
    """Дополняющий латент из априорного N(0, I)."""
    return rng.standard_normal(d)


def recombine_latents(params: ModelParams, z_a: np.ndarray, z_g: np.ndarray) -> np.ndarray:
    """F(Z^a изображения A, Z^g изображения B)."""
    generator = DeformableGenerator.for_params(params)
    out = generator.model_forward(LatentPair(appearance=z_a, geometric=z_g), params)
    return out[0] if out.shape[0] == 1 else out


def recombination_grid(params: ModelParams, latents: LatentPair, anchor: int = 0) -> list[np.ndarray]:
    """
    Две строки по N изображений: Z^a от anchor с Z^g каждого примера,
    затем Z^g от anchor с Z^a каждого примера.
    """
    n = latents.size
    if not 0 <= anchor < n:
        raise DimensionError(f"anchor {anchor} out of range for {n} latent pairs")
    a_fixed = LatentPair(
        appearance=np.repeat(latents.appearance[anchor:anchor + 1], n, axis=0), geometric=latents.geometric
    )
    g_fixed = LatentPair(
        appearance=latents.appearance, geometric=np.repeat(latents.geometric[anchor:anchor + 1], n, axis=0)
    )
    generator = DeformableGenerator.for_params(params)
    return list(generator.model_forward(a_fixed, params)) + list(generator.model_forward(g_fixed, params))


def level_means(latents: np.ndarray, factor_values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Средний латент по каждому уровню фактора, (n_levels, d)."""
    means = []
    for level in levels:
        mask = np.isclose(factor_values, level)
        if not mask.any():
            raise DegenerateFactorError(f"factor level {level} has no examples")
        means.append(latents[mask].mean(axis=0))
    return np.stack(means)


def response(means: np.ndarray, factor_vector: np.ndarray) -> np.ndarray:
    """R_i = |Zbar(i)^T v| для каждого измерения i."""
    return np.abs(means.T @ factor_vector)


def covariance_response(
    params: ModelParams,
    dataset: Dataset,
    config: LangevinConfig,
    factor: Optional[str] = None,
    latents: Optional[LatentPair] = None,
    steps: int = UNSEEN_STEPS,
    pool: Optional[ChunkedPool] = None,
) -> CovarianceReport:
    """(R^g, R^a) по уровням фактора. Если latents не даны, они выводятся Ланжевеном."""
    if dataset.factors is None:
        raise DataError("covariance response needs a dataset with a factor table")
    factor = factor or dataset.factors.designated
    levels = dataset.factors.levels(factor)
    if levels.size < 2:
        raise DegenerateFactorError(f"factor {factor!r} has a single level")
    v = dataset.factors.factor_vector(factor)
    values = dataset.factors.column(factor, dataset.ids)

    if latents is None:
        latents = InferenceService(params, config, pool=pool).infer_unseen(dataset.images, dataset.ids, steps=steps)
    if latents.size != len(dataset):
        raise DimensionError(f"{latents.size} latent pairs for {len(dataset)} images")

    means_g = level_means(latents.geometric, values, levels)
    means_a = level_means(latents.appearance, values, levels)
    return CovarianceReport(
        factor=factor,
        levels=levels,
        factor_vector=v,
        geometric=response(means_g, v),
        appearance=response(means_a, v),
        level_means_geometric=means_g,
        level_means_appearance=means_a,
    )


def top_response_dimensions(responses: np.ndarray, k: int = 1) -> np.ndarray:
    """Индексы k наибольших откликов по убыванию; при равенстве меньший индекс первым."""
    order = np.argsort(-np.asarray(responses), kind="stable")
    return order[:k]


def level_monotonicity(means: np.ndarray, levels: np.ndarray) -> float:
    """Spearman rho между средними по уровням одного измерения и самими уровнями."""
    rho = spearmanr(means, levels).statistic
    return float(rho)


def covariance_table(report: CovarianceReport) -> pd.DataFrame:
    rows = [
        {"latent": str(LatentKind.GEOMETRIC), "dim": i, "response": float(r)}
        for i, r in enumerate(report.geometric)
    ] + [
        {"latent": str(LatentKind.APPEARANCE), "dim": i, "response": float(r)}
        for i, r in enumerate(report.appearance)
    ]
    return pd.DataFrame(rows)


def reconstruction_error(
    params: ModelParams,
    dataset: Dataset,
    config: LangevinConfig,
    scale: PixelScale = PixelScale.BYTE,
    steps: int = UNSEEN_STEPS,
    start: Optional[LatentPair] = None,
    pool: Optional[ChunkedPool] = None,
) -> ReconstructionReport:
    """Сумма квадратов разностей пикселей на изображение (в шкале scale), среднее по набору."""
    if len(dataset) == 0:
        raise DataError("reconstruction error of an empty dataset")
    images = dataset.images.astype(params.dtype, copy=False)
    latents = InferenceService(params, config, pool=pool).infer_unseen(images, dataset.ids, steps=steps, start=start)
    output = DeformableGenerator.for_params(params).model_forward(latents, params)
    k = PIXEL_SCALE[PixelScale(scale)]
    diff = (images.astype(np.float64) - output.astype(np.float64)) * k
    per_image = np.sum(diff * diff, axis=(1, 2, 3))
    return ReconstructionReport(mean_error=float(per_image.mean()), per_image=per_image, scale=PixelScale(scale))


def zero_warp_baseline(params: ModelParams) -> ModelParams:
    """Модель без деформации: геометрический генератор принудительно даёт нулевое поле."""
    return params.with_zero_displacement()


def random_frozen_geometry(params: ModelParams, seed: int) -> ModelParams:
    """Абляция: theta_g заменена случайной инициализацией."""
    return reinit_branch(params, str(LatentKind.GEOMETRIC), seed)


def transfer_fine_tune(
    params: ModelParams,
    target: Dataset,
    config: TrainConfig,
    freeze: Sequence[LatentKind] = (LatentKind.GEOMETRIC,),
    pool: Optional[ChunkedPool] = None,
) -> TrainResult:
    """Обучение на target, в котором замороженные ветви не получают обновлений; цепочки новые."""
    cfg = config.model_copy(update={"freeze": list(freeze)})
    arch = params.architecture
    state = TrainResult(
        params=params.copy(),
        chains=ChainStore(arch.d_a, arch.d_g, seed=cfg.seed, dtype=params.dtype),
        seed=cfg.seed,
        mode=cfg.mode,
    )
    log.info("fine-tuning on %d images with %s frozen", len(target), [str(k) for k in freeze])
    return TrainingService(cfg, pool=pool).train(target, state)


def _geometric_sweep_fields(params: ModelParams, spec: SweepSpec) -> np.ndarray:
    if spec.vector != LatentKind.GEOMETRIC:
        raise DimensionError("warp sweeps run over the geometric latent")
    generator = DeformableGenerator.for_params(params)
    return generator.geometric_forward(sweep_latents(params, spec).geometric, params).data


def apply_warp_external(image: np.ndarray, params: ModelParams, spec: SweepSpec) -> list[np.ndarray]:
    """Деформации из прохода по Z^g применяются к внешнему изображению, генератор внешнего вида не участвует."""
    image = np.asarray(image)
    d = params.architecture.image_size
    if image.shape[:2] != (d, d):
        raise ResizeRequiredError(f"external image is {image.shape[:2]}, model resolution is {(d, d)}")
    fields = _geometric_sweep_fields(params, spec)
    sources = np.repeat(image[None].astype(fields.dtype), fields.shape[0], axis=0)
    return list(warp(sources, DisplacementField(fields)))


def warp_canonical(params: ModelParams, z_a: np.ndarray, spec: SweepSpec) -> list[np.ndarray]:
    """Одно каноническое изображение F_a(Z^a), деформируемое проходом по Z^g."""
    canonical = DeformableGenerator.for_params(params).appearance_forward(z_a, params)[0]
    return apply_warp_external(canonical, params, spec)


def augment_with_geometry(image: np.ndarray, params: ModelParams, count: int, seed: int = 0) -> list[np.ndarray]:
    """Геометрические вариации внешнего изображения при Z^g ~ N(0, I)."""
    image = np.asarray(image)
    d = params.architecture.image_size
    if image.shape[:2] != (d, d):
        raise ResizeRequiredError(f"external image is {image.shape[:2]}, model resolution is {(d, d)}")
    rng = np.random.default_rng(seed)
    z_g = rng.standard_normal((count, params.architecture.d_g)).astype(params.dtype)
    fields = DeformableGenerator.for_params(params).geometric_forward(z_g, params)
    return list(warp(np.repeat(image[None].astype(params.dtype), count, axis=0), fields))


class AnalysisService:
    """Анализ обученной модели: вывод латентов для новых изображений и все процедуры выше."""

    def __init__(self, params: ModelParams, langevin: LangevinConfig, pool: Optional[ChunkedPool] = None,
                 steps: int = UNSEEN_STEPS):
        self.params = params
        self.langevin = langevin
        self.pool = pool or ChunkedPool()
        self.steps = steps

    def infer(self, dataset: Dataset) -> LatentPair:
        if self.params.has_encoder:
            return encode(self.params, dataset.images.astype(self.params.dtype))
        images = dataset.images.astype(self.params.dtype)
        return InferenceService(self.params, self.langevin, pool=self.pool).infer_unseen(
            images, dataset.ids, steps=self.steps
        )

    def covariance(self, dataset: Dataset, factor: Optional[str] = None) -> CovarianceReport:
        return covariance_response(
            self.params, dataset, self.langevin, factor=factor, latents=self.infer(dataset), pool=self.pool
        )

    def reconstruction(self, dataset: Dataset, scale: PixelScale = PixelScale.BYTE) -> pd.DataFrame:
        """Ошибка модели и базовой линии zero-warp одним путём."""
        rows = []
        for name, params in (
            ("model", self.params),
            ("zero_warp", zero_warp_baseline(self.params)),
        ):
            report = reconstruction_error(params, dataset, self.langevin, scale, self.steps, pool=self.pool)
            rows.append({"model": name, **report.metadata()})
        return pd.DataFrame(rows)

    def swap(self, a: Dataset, b: Dataset) -> list[np.ndarray]:
        """Пары (A_i, B_i): F(Z^a(A_i), Z^g(B_i))."""
        if len(a) != len(b):
            raise DataError(f"swap needs equally sized sets, got {len(a)} and {len(b)}")
        za = self.infer(a)
        zb = self.infer(b)
        out = recombine_latents(self.params, za.appearance, zb.geometric)
        return list(out) if out.ndim == 4 else [out]
