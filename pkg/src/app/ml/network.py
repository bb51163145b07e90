from dataclasses import dataclass
from math import prod
from typing import Mapping, Optional

import numpy as np

from src.app.domain.enums import Activation, LayerKind
from src.app.domain.errors import ConfigurationError, DimensionError
from src.app.ml.layers import (
    activation_apply, activation_backward,
    conv_apply, conv_backward,
    deconv_apply, deconv_backward,
    fc_apply, fc_backward,
)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: LayerKind
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel_size: Optional[int] = None
    stride: int = 1
    activation: Activation = Activation.LINEAR

    def __post_init__(self):
        if self.kind in (LayerKind.DECONV, LayerKind.CONV):
            if self.kernel_size is None or len(self.in_shape) != 3 or len(self.out_shape) != 3:
                raise ConfigurationError(f"{self.name}: conv layers need a kernel size and (H, W, C) shapes")
            h, w, _ = self.in_shape
            oh, ow, _ = self.out_shape
            if self.kind == LayerKind.DECONV and (oh, ow) != (self.stride * h, self.stride * w):
                raise ConfigurationError(f"{self.name}: deconv stride {self.stride} maps {self.in_shape} to {self.out_shape}")
            if self.kind == LayerKind.CONV and (oh, ow) != (-(-h // self.stride), -(-w // self.stride)):
                raise ConfigurationError(f"{self.name}: conv stride {self.stride} maps {self.in_shape} to {self.out_shape}")
        if self.kind == LayerKind.ACTIVATION and self.in_shape != self.out_shape:
            raise ConfigurationError(f"{self.name}: activation layers keep the shape")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == LayerKind.FC:
            width = prod(self.out_shape)
            return {"weight": (prod(self.in_shape), width), "bias": (width,)}
        if self.kind in (LayerKind.DECONV, LayerKind.CONV):
            k = self.kernel_size
            return {"kernel": (k, k, self.in_shape[-1], self.out_shape[-1]), "bias": (self.out_shape[-1],)}
        return {}


@dataclass
class TapeEntry:
    x: np.ndarray
    pre: np.ndarray


class LayerStack:
    """Последовательность LayerSpec с параметрами в общем словаре под префиксом."""

    def __init__(self, prefix: str, specs: list[LayerSpec]):
        self.prefix = prefix
        self.specs = list(specs)
        for prev, nxt in zip(self.specs, self.specs[1:]):
            if tuple(prev.out_shape) != tuple(nxt.in_shape):
                raise ConfigurationError(
                    f"{prefix}: {prev.name} outputs {prev.out_shape} but {nxt.name} expects {nxt.in_shape}"
                )

    @property
    def in_shape(self) -> tuple[int, ...]:
        return tuple(self.specs[0].in_shape)

    @property
    def out_shape(self) -> tuple[int, ...]:
        return tuple(self.specs[-1].out_shape)

    def key(self, spec: LayerSpec, param: str) -> str:
        return f"{self.prefix}.{spec.name}.{param}"

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            self.key(spec, p): shape
            for spec in self.specs
            for p, shape in spec.param_shapes().items()
        }

    def init_params(self, rng: np.random.Generator, std: float = 0.02, dtype=np.float64) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                params[name] = (std * rng.standard_normal(shape)).astype(dtype)
        return params

    def forward(self, params: Mapping[str, np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list[TapeEntry]]:
        x = np.asarray(x)
        n = x.shape[0]
        if tuple(x.shape[1:]) != self.in_shape:
            raise DimensionError(f"{self.prefix}: input shape {x.shape[1:]} does not match {self.in_shape}")

        tape: list[TapeEntry] = []
        h = x
        for spec in self.specs:
            if spec.kind == LayerKind.FC:
                pre = fc_apply(h.reshape(n, -1), params[self.key(spec, "weight")],
                               params[self.key(spec, "bias")], out_shape=spec.out_shape)
            elif spec.kind == LayerKind.DECONV:
                pre = deconv_apply(h, params[self.key(spec, "kernel")], spec.stride, params[self.key(spec, "bias")])
            elif spec.kind == LayerKind.CONV:
                pre = conv_apply(h, params[self.key(spec, "kernel")], spec.stride, params[self.key(spec, "bias")])
            else:
                pre = h
            tape.append(TapeEntry(x=h, pre=pre))
            h = activation_apply(pre, spec.activation)
        return h, tape

    def backward(
        self,
        params: Mapping[str, np.ndarray],
        tape: list[TapeEntry],
        grad_y: np.ndarray,
        need_param_grads: bool = True,
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        grads: dict[str, np.ndarray] = {}
        g = grad_y
        for spec, entry in zip(reversed(self.specs), reversed(tape)):
            g = activation_backward(g, entry.pre, spec.activation)
            if spec.kind == LayerKind.FC:
                n = entry.x.shape[0]
                g, pg = fc_backward(g.reshape(n, -1), entry.x.reshape(n, -1),
                                    params[self.key(spec, "weight")], need_param_grads)
                g = g.reshape(entry.x.shape)
            elif spec.kind == LayerKind.DECONV:
                g, pg = deconv_backward(g, entry.x, params[self.key(spec, "kernel")], spec.stride, need_param_grads)
            elif spec.kind == LayerKind.CONV:
                g, pg = conv_backward(g, entry.x, params[self.key(spec, "kernel")], spec.stride, need_param_grads)
            else:
                pg = {}
            for p, value in pg.items():
                grads[self.key(spec, p)] = value
        return g, grads
