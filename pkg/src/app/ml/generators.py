"""
Генератор X = F_w(F_a(Z^a; theta_a), F_g(Z^g; theta_g)).

Трасса прямого прохода хранит обе ветви отдельно, поэтому при чередующемся
Ланжевене пересчитывается только ветвь изменившегося латента.
"""
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from src.app.core.schemas import ArchitectureConfig
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.enums import LatentKind
from src.app.domain.errors import DimensionError, NumericError
from src.app.domain.value_objects import DisplacementField, LatentPair
from src.app.ml.config import scale_architecture
from src.app.ml.network import LayerStack, TapeEntry
from src.app.ml.warp import warp, warp_backward


@dataclass(frozen=True)
class GeneratorTrace:
    latents: LatentPair
    appearance: np.ndarray                 # F_a, (N, D, D, 3) в [0, 1]
    appearance_tape: list[TapeEntry]
    field: np.ndarray                      # F_g * max_displacement, (N, D, D, 2)
    geometric_tape: Optional[list[TapeEntry]]
    output: np.ndarray


class DeformableGenerator:
    def __init__(self, architecture: ArchitectureConfig):
        self.architecture = architecture
        appearance_specs, geometric_specs = scale_architecture(architecture)
        self.appearance_stack = LayerStack(str(LatentKind.APPEARANCE), appearance_specs)
        self.geometric_stack = LayerStack(str(LatentKind.GEOMETRIC), geometric_specs)

    @classmethod
    def for_params(cls, params: ModelParams) -> "DeformableGenerator":
        return cls(params.architecture)

    @property
    def image_size(self) -> int:
        return self.architecture.image_size

    def _check_latent(self, z: np.ndarray, kind: LatentKind) -> np.ndarray:
        z = np.asarray(z)
        if z.ndim == 1:
            z = z[None]
        d = self.architecture.d_a if kind == LatentKind.APPEARANCE else self.architecture.d_g
        if z.ndim != 2 or z.shape[1] != d:
            raise DimensionError(f"{kind} latent: expected length {d}, got shape {z.shape}")
        return z

    # appearance
    def _appearance(self, z_a: np.ndarray, params: ModelParams) -> tuple[np.ndarray, list[TapeEntry]]:
        z_a = self._check_latent(z_a, LatentKind.APPEARANCE)
        t, tape = self.appearance_stack.forward(params.tensors, z_a)
        return 0.5 * (t + 1.0), tape

    def appearance_forward(self, z_a: np.ndarray, params: ModelParams) -> np.ndarray:
        image, _ = self._appearance(z_a, params)
        return image

    # geometric
    def _geometric(self, z_g: np.ndarray, params: ModelParams) -> tuple[np.ndarray, Optional[list[TapeEntry]]]:
        z_g = self._check_latent(z_g, LatentKind.GEOMETRIC)
        if params.zero_displacement:
            d = self.image_size
            return np.zeros((z_g.shape[0], d, d, 2), dtype=params.dtype), None
        raw, tape = self.geometric_stack.forward(params.tensors, z_g)
        return raw * params.max_displacement, tape

    def geometric_forward(self, z_g: np.ndarray, params: ModelParams) -> DisplacementField:
        field, _ = self._geometric(z_g, params)
        return DisplacementField(field)

    # composition
    def forward(
        self,
        latents: LatentPair,
        params: ModelParams,
        previous: Optional[GeneratorTrace] = None,
        changed: Optional[LatentKind] = None,
    ) -> GeneratorTrace:
        """Полный проход; с previous и changed пересчитывается только изменившаяся ветвь."""
        if previous is not None and changed == LatentKind.GEOMETRIC:
            appearance, appearance_tape = previous.appearance, previous.appearance_tape
        else:
            appearance, appearance_tape = self._appearance(latents.appearance, params)
        if previous is not None and changed == LatentKind.APPEARANCE:
            field, geometric_tape = previous.field, previous.geometric_tape
        else:
            field, geometric_tape = self._geometric(latents.geometric, params)

        output = appearance if params.zero_displacement else warp(appearance, DisplacementField(field))
        if not np.all(np.isfinite(output)):
            raise NumericError("generator produced non-finite pixels")
        return GeneratorTrace(
            latents=latents,
            appearance=appearance,
            appearance_tape=appearance_tape,
            field=field,
            geometric_tape=geometric_tape,
            output=output,
        )

    def model_forward(self, latents: LatentPair, params: ModelParams) -> np.ndarray:
        return self.forward(latents, params).output

    def backward(
        self,
        trace: GeneratorTrace,
        params: ModelParams,
        grad_output: np.ndarray,
        wrt: Iterable[LatentKind] = (LatentKind.APPEARANCE, LatentKind.GEOMETRIC),
        need_param_grads: bool = True,
    ) -> tuple[dict[LatentKind, np.ndarray], dict[str, np.ndarray]]:
        """
        dL/dX -> (градиенты по выбранным латентам, градиенты параметров выбранных ветвей).
        Градиенты параметров считаются только для ветвей из wrt.
        """
        wrt = set(wrt)
        grad_output = np.asarray(grad_output)
        if grad_output.shape != trace.output.shape:
            raise DimensionError(f"generator backward: gradient {grad_output.shape} vs output {trace.output.shape}")

        latent_grads: dict[LatentKind, np.ndarray] = {}
        param_grads: dict[str, np.ndarray] = {}

        if params.zero_displacement:
            grad_appearance, grad_field = grad_output, None
        else:
            grad_appearance, grad_field = warp_backward(
                trace.appearance,
                DisplacementField(trace.field),
                grad_output,
                need_source_grad=LatentKind.APPEARANCE in wrt,
            )

        if LatentKind.APPEARANCE in wrt:
            # d/dt 0.5 * (t + 1)
            gz, grads = self.appearance_stack.backward(
                params.tensors, trace.appearance_tape, 0.5 * grad_appearance, need_param_grads
            )
            latent_grads[LatentKind.APPEARANCE] = gz
            param_grads.update(grads)

        if LatentKind.GEOMETRIC in wrt:
            if grad_field is None or trace.geometric_tape is None:
                latent_grads[LatentKind.GEOMETRIC] = np.zeros_like(trace.latents.geometric)
            else:
                gz, grads = self.geometric_stack.backward(
                    params.tensors, trace.geometric_tape, grad_field * params.max_displacement, need_param_grads
                )
                latent_grads[LatentKind.GEOMETRIC] = gz
                param_grads.update(grads)

        return latent_grads, param_grads

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {**self.appearance_stack.param_shapes(), **self.geometric_stack.param_shapes()}
