from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.app.domain.errors import DataError, DegenerateFactorError, DimensionError


@dataclass(frozen=True)
class FactorTable:
    """Истинные факторы по примерам: строки = example ids, колонки = факторы."""
    frame: pd.DataFrame
    designated: Optional[str] = None

    def column(self, factor: str, ids: Sequence[str]) -> np.ndarray:
        if factor not in self.frame.columns:
            raise DataError(f"unknown factor {factor!r}; known: {list(self.frame.columns)}")
        return self.frame.loc[list(ids), factor].to_numpy(dtype=np.float64)

    def levels(self, factor: str) -> np.ndarray:
        if factor not in self.frame.columns:
            raise DataError(f"unknown factor {factor!r}; known: {list(self.frame.columns)}")
        return np.sort(self.frame[factor].unique().astype(np.float64))

    def factor_vector(self, factor: Optional[str] = None) -> np.ndarray:
        """Уровни фактора, нормированные на единичную длину."""
        factor = factor or self.designated
        if factor is None:
            raise DataError("no factor given and no designated factor in the table")
        levels = self.levels(factor)
        if levels.size < 2:
            raise DegenerateFactorError(f"factor {factor!r} has a single level {levels.tolist()}")
        norm = np.linalg.norm(levels)
        if norm == 0:
            raise DegenerateFactorError(f"factor {factor!r} has an all-zero level vector")
        return levels / norm


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray                # (N, D, D, 3) в [0, 1]
    ids: list[str]
    factors: Optional[FactorTable] = None

    def __post_init__(self):
        imgs = np.asarray(self.images)
        if imgs.ndim != 4 or imgs.shape[-1] != 3 or imgs.shape[1] != imgs.shape[2]:
            raise DimensionError(f"dataset images must be (N, D, D, 3), got shape {imgs.shape}")
        if len(self.ids) != imgs.shape[0]:
            raise DataError(f"{len(self.ids)} ids for {imgs.shape[0]} images")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("example ids must be unique")
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "ids", [str(e) for e in self.ids])

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.images.shape[1])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        ids = [self.ids[i] for i in idx]
        factors = None
        if self.factors is not None:
            factors = FactorTable(self.factors.frame.loc[ids], self.factors.designated)
        return Dataset(images=self.images[idx], ids=ids, factors=factors)

    def astype(self, dtype) -> "Dataset":
        return Dataset(images=self.images.astype(dtype), ids=list(self.ids), factors=self.factors)
