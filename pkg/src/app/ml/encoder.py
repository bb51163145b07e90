from dataclasses import dataclass

import numpy as np

from src.app.core.schemas import ArchitectureConfig
from src.app.domain.entities.model_params import ENCODER_PREFIX, ModelParams
from src.app.domain.errors import DimensionError
from src.app.ml.config import encoder_specs
from src.app.ml.network import LayerStack, TapeEntry


@dataclass(frozen=True)
class Posterior:
    """Факторизованное гауссово q(Z^a, Z^g | X; phi)."""
    mu_a: np.ndarray
    logvar_a: np.ndarray
    mu_g: np.ndarray
    logvar_g: np.ndarray


class Encoder:
    """Сеть вывода VAE: conv stride 2 (зеркало генератора) и fc на 2 * (d_a + d_g) выходов."""

    def __init__(self, architecture: ArchitectureConfig):
        self.architecture = architecture
        self.stack = LayerStack(ENCODER_PREFIX, encoder_specs(architecture))

    def _split(self, h: np.ndarray) -> Posterior:
        d_a, d_g = self.architecture.d_a, self.architecture.d_g
        return Posterior(
            mu_a=h[:, :d_a],
            logvar_a=h[:, d_a:2 * d_a],
            mu_g=h[:, 2 * d_a:2 * d_a + d_g],
            logvar_g=h[:, 2 * d_a + d_g:],
        )

    def forward(self, params: ModelParams, images: np.ndarray) -> tuple[Posterior, list[TapeEntry]]:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        if tuple(images.shape[1:]) != self.stack.in_shape:
            raise DimensionError(f"encoder: image shape {images.shape[1:]} does not match {self.stack.in_shape}")
        h, tape = self.stack.forward(params.tensors, images)
        return self._split(h), tape

    def backward(
        self,
        params: ModelParams,
        tape: list[TapeEntry],
        grad: Posterior,
    ) -> dict[str, np.ndarray]:
        g = np.concatenate([grad.mu_a, grad.logvar_a, grad.mu_g, grad.logvar_g], axis=1)
        _, grads = self.stack.backward(params.tensors, tape, g, need_param_grads=True)
        return grads
