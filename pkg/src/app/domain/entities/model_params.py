from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from src.app.core.schemas import ArchitectureConfig
from src.app.domain.enums import LatentKind

ENCODER_PREFIX = "encoder"


@dataclass(frozen=True)
class ModelParams:
    """theta = (theta_a, theta_g) и, в режиме VAE, phi: плоский словарь 'prefix.layer.param' -> массив."""
    tensors: Mapping[str, np.ndarray]
    architecture: ArchitectureConfig
    sigma: float = 0.3
    max_displacement: float = 8.0
    zero_displacement: bool = False

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    @property
    def has_encoder(self) -> bool:
        return any(name.startswith(ENCODER_PREFIX + ".") for name in self.tensors)

    def names(self, prefix: Optional[str] = None) -> list[str]:
        if prefix is None:
            return sorted(self.tensors)
        return sorted(n for n in self.tensors if n.startswith(prefix + "."))

    def of(self, kind: LatentKind) -> dict[str, np.ndarray]:
        return {n: self.tensors[n] for n in self.names(str(kind))}

    def with_tensors(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        merged = dict(self.tensors)
        merged.update(updates)
        return replace(self, tensors=merged)

    def without(self, prefix: str) -> "ModelParams":
        return replace(self, tensors={n: t for n, t in self.tensors.items() if not n.startswith(prefix + ".")})

    def with_zero_displacement(self, enabled: bool = True) -> "ModelParams":
        return replace(self, zero_displacement=enabled)

    def copy(self) -> "ModelParams":
        return replace(self, tensors={n: t.copy() for n, t in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return replace(self, tensors={n: t.astype(dtype) for n, t in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())
