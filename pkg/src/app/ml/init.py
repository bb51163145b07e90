import numpy as np

from src.app.core.schemas import ArchitectureConfig
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.services.seeding import PARAM_INIT, rng_for
from src.app.ml.config import INIT_STD
from src.app.ml.encoder import Encoder
from src.app.ml.generators import DeformableGenerator

# у каждой сети (appearance, geometric, encoder) свой подпоток PARAM_INIT
APPEARANCE_STREAM = 0
GEOMETRIC_STREAM = 1
ENCODER_STREAM = 2


def init_model_params(
    architecture: ArchitectureConfig,
    seed: int = 0,
    sigma: float = 0.3,
    max_displacement: float = 8.0,
    dtype=np.float32,
    with_encoder: bool = False,
    std: float = INIT_STD,
) -> ModelParams:
    """N(0, std^2) для весов и ядер, нули для смещений."""
    generator = DeformableGenerator(architecture)
    tensors: dict[str, np.ndarray] = {}
    tensors.update(generator.appearance_stack.init_params(rng_for(seed, PARAM_INIT, APPEARANCE_STREAM), std, dtype))
    tensors.update(generator.geometric_stack.init_params(rng_for(seed, PARAM_INIT, GEOMETRIC_STREAM), std, dtype))
    if with_encoder:
        encoder = Encoder(architecture)
        tensors.update(encoder.stack.init_params(rng_for(seed, PARAM_INIT, ENCODER_STREAM), std, dtype))
    return ModelParams(
        tensors=tensors,
        architecture=architecture,
        sigma=float(sigma),
        max_displacement=float(max_displacement),
    )


def reinit_branch(params: ModelParams, prefix: str, seed: int, std: float = INIT_STD) -> ModelParams:
    """Заново инициализирует одну ветвь (например, случайная замороженная theta_g для абляции)."""
    fresh = init_model_params(
        params.architecture,
        seed=seed,
        sigma=params.sigma,
        max_displacement=params.max_displacement,
        dtype=params.dtype,
        with_encoder=params.has_encoder,
        std=std,
    )
    return params.with_tensors({n: t for n, t in fresh.tensors.items() if n.startswith(prefix + ".")})
