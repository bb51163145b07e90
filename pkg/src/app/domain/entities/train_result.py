from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.app.domain.entities.chain_store import ChainStore
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.enums import TrainMode


@dataclass(frozen=True)
class MetricsRecord:
    iteration: int
    mse: float
    log_joint_mean: float
    wall_ms: float


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            step=self.step,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


@dataclass
class TrainResult:
    params: ModelParams
    chains: ChainStore
    iteration: int = 0
    metrics: list[MetricsRecord] = field(default_factory=list)
    optimizer: OptimizerState = field(default_factory=OptimizerState)
    seed: int = 0
    mode: TrainMode = TrainMode.ABP
