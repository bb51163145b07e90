from src.app.core.schemas import ArchitectureConfig
from src.app.domain.enums import Activation, LayerKind
from src.app.domain.errors import ConfigurationError
from src.app.ml.network import LayerSpec

APPEARANCE_CHANNELS = 3
GEOMETRIC_CHANNELS = 2
INIT_STD = 0.02
DEFAULT_PRESET = "standard"

PRESETS: dict[str, dict] = {
    # 64x64, d_a = d_g = 64
    "standard": {"image_size": 64, "d_a": 64, "d_g": 64, "geometric_widths": [128, 64, 32, 16], "kernel_sizes": [3, 3, 5, 5]},
    "tiny": {"image_size": 32, "d_a": 8, "d_g": 8, "geometric_widths": [16, 8, 4], "kernel_sizes": [3, 3, 5]},
    "test16": {"image_size": 16, "d_a": 4, "d_g": 4, "geometric_widths": [8, 4], "kernel_sizes": [3, 3]},
    "test8": {"image_size": 8, "d_a": 3, "d_g": 3, "geometric_widths": [4], "kernel_sizes": [3]},
}


def preset(name: str = DEFAULT_PRESET, **overrides) -> ArchitectureConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return ArchitectureConfig.create(**{**PRESETS[name], **overrides})


def _generator_specs(
    config: ArchitectureConfig,
    widths: list[int],
    latent_dim: int,
    out_channels: int,
    out_activation: Activation,
) -> list[LayerSpec]:
    b = config.base_size
    specs = [
        LayerSpec(
            name="fc1",
            kind=LayerKind.FC,
            in_shape=(latent_dim,),
            out_shape=(b, b, widths[0]),
            activation=Activation.RELU,
        )
    ]
    size = b
    for i, k in enumerate(config.kernel_sizes):
        last = i == len(widths) - 1
        out_c = out_channels if last else widths[i + 1]
        specs.append(
            LayerSpec(
                name=f"deconv{i + 1}",
                kind=LayerKind.DECONV,
                in_shape=(size, size, widths[i]),
                out_shape=(2 * size, 2 * size, out_c),
                kernel_size=k,
                stride=2,
                activation=out_activation if last else Activation.RELU,
            )
        )
        size *= 2
    return specs


def scale_architecture(config: ArchitectureConfig) -> tuple[list[LayerSpec], list[LayerSpec]]:
    """(appearance specs, geometric specs); ширины appearance = round(alpha * geometric)."""
    appearance = _generator_specs(
        config, config.appearance_widths, config.d_a, APPEARANCE_CHANNELS, Activation.TANH
    )
    geometric = _generator_specs(
        config, list(config.geometric_widths), config.d_g, GEOMETRIC_CHANNELS, Activation.LINEAR
    )
    return appearance, geometric


def encoder_specs(config: ArchitectureConfig) -> list[LayerSpec]:
    """Зеркало генератора: conv stride 2 вместо deconv, выход (mu_a, logvar_a, mu_g, logvar_g)."""
    widths = list(config.geometric_widths)
    kernels = list(config.kernel_sizes)
    specs: list[LayerSpec] = []
    size = config.image_size
    in_c = APPEARANCE_CHANNELS
    for i, (w, k) in enumerate(zip(reversed(widths), reversed(kernels))):
        specs.append(
            LayerSpec(
                name=f"conv{i + 1}",
                kind=LayerKind.CONV,
                in_shape=(size, size, in_c),
                out_shape=(size // 2, size // 2, w),
                kernel_size=k,
                stride=2,
                activation=Activation.RELU,
            )
        )
        size //= 2
        in_c = w
    specs.append(
        LayerSpec(
            name="fc1",
            kind=LayerKind.FC,
            in_shape=(size, size, in_c),
            out_shape=(2 * (config.d_a + config.d_g),),
            activation=Activation.LINEAR,
        )
    )
    return specs
