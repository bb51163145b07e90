from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.app.domain.enums import LatentKind, LrSchedule, OptimizerKind, ShapeKind, TrainMode
from src.app.domain.errors import ConfigurationError


class ConfigModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    @classmethod
    def create(cls, **kwargs: Any):
        """Как конструктор, но ошибки валидации приходят как ConfigurationError."""
        try:
            return cls(**kwargs)
        except ValidationError as e:
            raise ConfigurationError(f"invalid {cls.__name__}: {e}") from e

    def to_json_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def round_half_up(x: float) -> int:
    return int(x + 0.5)


# Architecture
class ArchitectureConfig(ConfigModel):
    image_size: int = Field(64, gt=0)
    d_a: int = Field(64, gt=0)
    d_g: int = Field(64, gt=0)
    geometric_widths: list[int] = Field(default_factory=lambda: [128, 64, 32, 16])
    kernel_sizes: list[int] = Field(default_factory=lambda: [3, 3, 5, 5])
    alpha: float = Field(0.625, gt=0)
    base_size: int = Field(4, gt=0)

    @model_validator(mode="after")
    def _check_shapes(self):
        if not self.geometric_widths:
            raise ValueError("geometric_widths must not be empty")
        if any(w <= 0 for w in self.geometric_widths):
            raise ValueError("geometric widths must be positive")
        if len(self.kernel_sizes) != len(self.geometric_widths):
            raise ValueError("kernel_sizes and geometric_widths must have the same length")
        if any(k <= 0 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be positive and odd")
        expected = self.base_size * 2 ** len(self.geometric_widths)
        if expected != self.image_size:
            raise ValueError(
                f"base_size * 2^{len(self.geometric_widths)} = {expected} does not match image_size {self.image_size}"
            )
        return self

    @property
    def appearance_widths(self) -> list[int]:
        widths = [round_half_up(self.alpha * w) for w in self.geometric_widths]
        if min(widths) < 1:
            raise ConfigurationError(
                f"alpha={self.alpha} rounds a geometric width of {self.geometric_widths} down to zero"
            )
        return widths


# Inference
class LangevinConfig(ConfigModel):
    step_size: float = Field(0.1, gt=0)
    steps: int = Field(10, ge=1)
    noise: bool = True
    seed: int = Field(0, ge=0)
    # линейный отжиг шага к step_size_final за steps раундов; None = постоянный шаг
    step_size_final: Optional[float] = Field(None, gt=0)

    def step_size_at(self, round_index: int, rounds: Optional[int] = None) -> float:
        rounds = self.steps if rounds is None else rounds
        if self.step_size_final is None or rounds <= 1:
            return self.step_size
        frac = round_index / (rounds - 1)
        return self.step_size + frac * (self.step_size_final - self.step_size)


# Training
class TrainConfig(ConfigModel):
    iterations: int = Field(100, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-4, gt=0)
    lr_schedule: LrSchedule = LrSchedule.CONSTANT
    lr_step: int = Field(1000, ge=1)
    lr_decay: float = Field(0.5, gt=0)
    optimizer: OptimizerKind = OptimizerKind.SGD
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    langevin: LangevinConfig = Field(default_factory=LangevinConfig)
    mode: TrainMode = TrainMode.ABP
    seed: int = Field(0, ge=0)
    sigma: float = Field(0.3, gt=0)
    max_displacement: float = Field(8.0, gt=0)
    dtype: str = "float32"
    freeze: list[LatentKind] = Field(default_factory=list)
    zero_displacement: bool = False
    log_every: int = Field(10, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    record_timing: bool = True

    @field_validator("dtype")
    @classmethod
    def _check_dtype(cls, v: str) -> str:
        if v not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        return v

    def learning_rate_at(self, iteration: int) -> float:
        if self.lr_schedule == LrSchedule.STEP:
            return self.learning_rate * self.lr_decay ** (iteration // self.lr_step)
        return self.learning_rate


# Synthetic data
class SynthSpec(ConfigModel):
    count: int = Field(64, ge=1)
    image_size: int = Field(32, ge=4)
    shape: ShapeKind = ShapeKind.ELLIPSE
    tx_range: tuple[float, float] = (-4.0, 4.0)
    ty_range: tuple[float, float] = (0.0, 0.0)
    # дискретные уровни сдвига; если заданы, tx берётся из них по кругу
    tx_levels: Optional[list[float]] = None
    scale_range: tuple[float, float] = (1.0, 1.0)
    rotation_range: tuple[float, float] = (0.0, 0.0)   # градусы
    hue_range: tuple[float, float] = (0.0, 1.0)
    brightness_range: tuple[float, float] = (0.6, 1.0)
    background: tuple[float, float, float] = (0.1, 0.1, 0.1)
    # полуоси фигуры при scale = 1, в долях стороны изображения
    radius: tuple[float, float] = (0.25, 0.18)
    supersample: int = Field(4, ge=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self):
        for name in ("tx_range", "ty_range", "scale_range", "rotation_range", "hue_range", "brightness_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.scale_range[0] <= 0:
            raise ValueError("scale must be positive")
        if not (0 <= self.brightness_range[0] and self.brightness_range[1] <= 1):
            raise ValueError("brightness must lie in [0, 1]")
        if self.tx_levels is not None and not self.tx_levels:
            raise ValueError("tx_levels must not be empty")
        return self
