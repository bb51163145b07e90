from typing import Mapping, Optional, Protocol

import numpy as np

from src.app.core.schemas import TrainConfig
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.entities.train_result import OptimizerState
from src.app.domain.enums import OptimizerKind


def sgd_step(params: ModelParams, gradient: Mapping[str, np.ndarray], learning_rate: float) -> ModelParams:
    """theta <- theta + eta * g: подъём по лог-правдоподобию. Тензоры без градиента не меняются."""
    updates = {}
    for name, g in gradient.items():
        t = params.tensors[name]
        updates[name] = (t + learning_rate * g).astype(t.dtype, copy=False)
    return params.with_tensors(updates)


class Optimizer(Protocol):
    state: OptimizerState

    def step(self, params: ModelParams, gradient: Mapping[str, np.ndarray], learning_rate: float) -> ModelParams: ...


class SgdAscent:
    def __init__(self, state: Optional[OptimizerState] = None):
        self.state = state or OptimizerState()

    def step(self, params: ModelParams, gradient: Mapping[str, np.ndarray], learning_rate: float) -> ModelParams:
        self.state.step += 1
        return sgd_step(params, gradient, learning_rate)


class AdamAscent:
    """Adam с поправкой смещения моментов, в направлении роста целевой функции."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 state: Optional[OptimizerState] = None):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = state or OptimizerState()

    def step(self, params: ModelParams, gradient: Mapping[str, np.ndarray], learning_rate: float) -> ModelParams:
        self.state.step += 1
        k = self.state.step
        c1 = 1.0 - self.beta1 ** k
        c2 = 1.0 - self.beta2 ** k
        updates = {}
        for name in sorted(gradient):
            g = gradient[name]
            t = params.tensors[name]
            m = self.state.m.get(name)
            v = self.state.v.get(name)
            m = (1.0 - self.beta1) * g if m is None else self.beta1 * m + (1.0 - self.beta1) * g
            v = (1.0 - self.beta2) * g * g if v is None else self.beta2 * v + (1.0 - self.beta2) * g * g
            self.state.m[name] = m.astype(t.dtype, copy=False)
            self.state.v[name] = v.astype(t.dtype, copy=False)
            step = learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
            updates[name] = (t + step).astype(t.dtype, copy=False)
        return params.with_tensors(updates)


def make_optimizer(config: TrainConfig, state: Optional[OptimizerState] = None) -> Optimizer:
    if config.optimizer == OptimizerKind.ADAM:
        return AdamAscent(config.adam_beta1, config.adam_beta2, config.adam_eps, state=state)
    return SgdAscent(state=state)
