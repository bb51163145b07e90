from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.app.domain.enums import LatentKind, PixelScale
from src.app.domain.errors import ConfigurationError, DimensionError, NumericError


def _as_batch(z, name: str) -> np.ndarray:
    arr = np.asarray(z)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected (d,) or (N, d), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: latent contains non-finite values")
    return arr


@dataclass(frozen=True)
class LatentPair:
    """(Z^a, Z^g) для батча из N изображений: appearance (N, d_a), geometric (N, d_g)."""
    appearance: np.ndarray
    geometric: np.ndarray

    def __post_init__(self):
        a = _as_batch(self.appearance, "appearance latent")
        g = _as_batch(self.geometric, "geometric latent")
        if a.shape[0] != g.shape[0]:
            raise DimensionError(
                f"latent batch sizes differ: appearance {a.shape}, geometric {g.shape}"
            )
        object.__setattr__(self, "appearance", a)
        object.__setattr__(self, "geometric", g)

    @property
    def size(self) -> int:
        return int(self.appearance.shape[0])

    def get(self, kind: LatentKind) -> np.ndarray:
        return self.appearance if kind == LatentKind.APPEARANCE else self.geometric

    def replace(self, kind: LatentKind, z: np.ndarray) -> "LatentPair":
        if kind == LatentKind.APPEARANCE:
            return LatentPair(appearance=z, geometric=self.geometric)
        return LatentPair(appearance=self.appearance, geometric=z)

    def take(self, index) -> "LatentPair":
        idx = np.atleast_1d(np.asarray(index))
        return LatentPair(appearance=self.appearance[idx], geometric=self.geometric[idx])

    def astype(self, dtype) -> "LatentPair":
        return LatentPair(appearance=self.appearance.astype(dtype), geometric=self.geometric.astype(dtype))

    @staticmethod
    def zeros(n: int, d_a: int, d_g: int, dtype=np.float64) -> "LatentPair":
        return LatentPair(appearance=np.zeros((n, d_a), dtype), geometric=np.zeros((n, d_g), dtype))

    @staticmethod
    def concat(pairs: list["LatentPair"]) -> "LatentPair":
        return LatentPair(
            appearance=np.concatenate([p.appearance for p in pairs], axis=0),
            geometric=np.concatenate([p.geometric for p in pairs], axis=0),
        )


@dataclass(frozen=True)
class DisplacementField:
    """Поле смещений (N, D_x, D_y, 2): канал 0 = dx, канал 1 = dy, в пикселях."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[-1] != 2:
            raise DimensionError(f"displacement field: expected (N, D_x, D_y, 2), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("displacement field contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def dx(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def dy(self) -> np.ndarray:
        return self.data[..., 1]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return int(self.data.shape[1]), int(self.data.shape[2])

    @staticmethod
    def constant(n: int, size: int, dx: float, dy: float, dtype=np.float64) -> "DisplacementField":
        arr = np.empty((n, size, size, 2), dtype=dtype)
        arr[..., 0] = dx
        arr[..., 1] = dy
        return DisplacementField(arr)


@dataclass(frozen=True)
class SweepSpec:
    vector: LatentKind
    dim: int
    gamma: float = 10.0
    steps: int = 10
    complementary: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.dim < 0:
            raise DimensionError(f"sweep dimension must be non-negative, got {self.dim}")

    def values(self) -> np.ndarray:
        # -γ, -γ + 2γ/steps, ..., +γ
        return np.linspace(-self.gamma, self.gamma, self.steps + 1)


@dataclass(frozen=True)
class CovarianceReport:
    factor: str
    levels: np.ndarray
    factor_vector: np.ndarray          # unit-norm v
    geometric: np.ndarray              # R^g, (d_g,)
    appearance: np.ndarray             # R^a, (d_a,)
    level_means_geometric: np.ndarray  # (n_levels, d_g)
    level_means_appearance: np.ndarray # (n_levels, d_a)


@dataclass(frozen=True)
class ReconstructionReport:
    mean_error: float
    per_image: np.ndarray
    scale: PixelScale
    convention: str = field(default="sum of squared pixel differences per image")

    def metadata(self) -> dict:
        return {
            "mean_error": float(self.mean_error),
            "images": int(self.per_image.shape[0]),
            "pixel_scale": str(self.scale),
            "convention": self.convention,
        }
