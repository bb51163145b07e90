"""
Слои генераторов и энкодера: fully-connected, transposed conv, conv, активации.

Каждая функция *_apply чистая; парная *_backward по градиенту выхода возвращает
(градиент входа, словарь градиентов параметров). Тензоры channels-last:
(N, H, W, C) или (H, W, C) для одного примера.
"""
from typing import Optional

import numpy as np

from src.app.domain.enums import Activation
from src.app.domain.errors import ConfigurationError, DimensionError


def padding_for(kernel_size: int) -> int:
    return (kernel_size - 1) // 2


def _as_nhwc(x: np.ndarray, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise DimensionError(f"{what}: expected (H, W, C) or (N, H, W, C), got shape {x.shape}")
    return x, False


def _check_kernel(kernel: np.ndarray, in_channels: int, what: str) -> int:
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise DimensionError(f"{what}: kernel must be (k, k, C_in, C_out), got shape {kernel.shape}")
    if kernel.shape[0] % 2 == 0:
        raise ConfigurationError(f"{what}: kernel size must be odd, got {kernel.shape[0]}")
    if kernel.shape[2] != in_channels:
        raise DimensionError(
            f"{what}: input has {in_channels} channels but kernel {kernel.shape} expects {kernel.shape[2]}"
        )
    return int(kernel.shape[0])


def _check_stride(stride: int) -> int:
    if int(stride) != stride or stride < 1:
        raise ConfigurationError(f"stride must be a positive integer, got {stride}")
    return int(stride)


def _check_bias(bias: Optional[np.ndarray], width: int, what: str) -> None:
    if bias is not None and np.shape(bias) != (width,):
        raise DimensionError(f"{what}: bias shape {np.shape(bias)} does not match output width ({width},)")


# fully-connected
def fc_apply(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    out_shape: Optional[tuple[int, ...]] = None,
) -> np.ndarray:
    x = np.asarray(x)
    if weights.ndim != 2:
        raise DimensionError(f"fc: weights must be (in, out), got shape {weights.shape}")
    if x.shape[-1] != weights.shape[0]:
        raise DimensionError(f"fc: input shape {x.shape} does not match weights shape {weights.shape}")
    _check_bias(bias, weights.shape[1], "fc")

    y = x @ weights + bias
    if out_shape is not None:
        y = y.reshape(x.shape[:-1] + tuple(out_shape))
    return y


def fc_backward(
    grad_y: np.ndarray,
    x: np.ndarray,
    weights: np.ndarray,
    need_param_grads: bool = True,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x = np.asarray(x)
    g = np.asarray(grad_y).reshape(x.shape[:-1] + (weights.shape[1],))
    grad_x = g @ weights.T
    grads: dict[str, np.ndarray] = {}
    if need_param_grads:
        x2 = x.reshape(-1, weights.shape[0])
        g2 = g.reshape(-1, weights.shape[1])
        grads["weight"] = x2.T @ g2
        grads["bias"] = g2.sum(axis=0)
    return grad_x, grads


# transposed convolution
def deconv_apply(
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int,
    bias: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Scatter-accumulate: out[s*i + a - p] += x[i] @ K[a], обрезка до s * H.
    """
    x4, single = _as_nhwc(x, "deconv input")
    k = _check_kernel(kernel, x4.shape[-1], "deconv")
    s = _check_stride(stride)
    _check_bias(bias, kernel.shape[3], "deconv")

    n, h, w, _ = x4.shape
    p = padding_for(k)
    buf = np.zeros((n, s * h + k, s * w + k, kernel.shape[3]), dtype=np.result_type(x4, kernel))
    for a in range(k):
        for b in range(k):
            buf[:, a:a + s * h:s, b:b + s * w:s, :] += x4 @ kernel[a, b]

    out = buf[:, p:p + s * h, p:p + s * w, :]
    if bias is not None:
        out = out + bias
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def deconv_backward(
    grad_y: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int,
    need_param_grads: bool = True,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x4, single = _as_nhwc(x, "deconv input")
    g4, _ = _as_nhwc(grad_y, "deconv upstream gradient")
    k = int(kernel.shape[0])
    s = int(stride)
    n, h, w, cin = x4.shape
    cout = kernel.shape[3]
    if g4.shape != (n, s * h, s * w, cout):
        raise DimensionError(f"deconv backward: gradient shape {g4.shape} does not match output {(n, s * h, s * w, cout)}")

    p = padding_for(k)
    gbuf = np.zeros((n, s * h + k, s * w + k, cout), dtype=g4.dtype)
    gbuf[:, p:p + s * h, p:p + s * w, :] = g4

    grad_x = np.zeros_like(x4, dtype=np.result_type(x4, g4))
    grad_k = np.zeros_like(kernel) if need_param_grads else None
    x2 = x4.reshape(-1, cin)
    for a in range(k):
        for b in range(k):
            gs = gbuf[:, a:a + s * h:s, b:b + s * w:s, :]
            grad_x += gs @ kernel[a, b].T
            if grad_k is not None:
                grad_k[a, b] = x2.T @ gs.reshape(-1, cout)

    grads: dict[str, np.ndarray] = {}
    if need_param_grads:
        grads["kernel"] = grad_k
        grads["bias"] = g4.sum(axis=(0, 1, 2))
    return (grad_x[0] if single else grad_x), grads


# convolution
def conv_apply(
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int,
    bias: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    out[o] = sum_a x[s*o + a - p] @ K[a], нули вне изображения; stride 2 делит размер пополам.
    """
    x4, single = _as_nhwc(x, "conv input")
    k = _check_kernel(kernel, x4.shape[-1], "conv")
    s = _check_stride(stride)
    _check_bias(bias, kernel.shape[3], "conv")

    n, hh, ww, cin = x4.shape
    p = padding_for(k)
    ho, wo = -(-hh // s), -(-ww // s)
    xbuf = np.zeros((n, hh + k, ww + k, cin), dtype=x4.dtype)
    xbuf[:, p:p + hh, p:p + ww, :] = x4

    out = np.zeros((n, ho, wo, kernel.shape[3]), dtype=np.result_type(x4, kernel))
    for a in range(k):
        for b in range(k):
            out += xbuf[:, a:a + s * ho:s, b:b + s * wo:s, :] @ kernel[a, b]
    if bias is not None:
        out += bias
    return out[0] if single else out


def conv_backward(
    grad_y: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int,
    need_param_grads: bool = True,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x4, single = _as_nhwc(x, "conv input")
    g4, _ = _as_nhwc(grad_y, "conv upstream gradient")
    k = int(kernel.shape[0])
    s = int(stride)
    n, hh, ww, cin = x4.shape
    cout = kernel.shape[3]
    ho, wo = -(-hh // s), -(-ww // s)
    if g4.shape != (n, ho, wo, cout):
        raise DimensionError(f"conv backward: gradient shape {g4.shape} does not match output {(n, ho, wo, cout)}")

    p = padding_for(k)
    xbuf = np.zeros((n, hh + k, ww + k, cin), dtype=x4.dtype)
    xbuf[:, p:p + hh, p:p + ww, :] = x4
    gxbuf = np.zeros((n, hh + k, ww + k, cin), dtype=np.result_type(x4, g4))
    grad_k = np.zeros_like(kernel) if need_param_grads else None
    g2 = g4.reshape(-1, cout)
    for a in range(k):
        for b in range(k):
            gxbuf[:, a:a + s * ho:s, b:b + s * wo:s, :] += g4 @ kernel[a, b].T
            if grad_k is not None:
                grad_k[a, b] = xbuf[:, a:a + s * ho:s, b:b + s * wo:s, :].reshape(-1, cin).T @ g2

    grad_x = np.ascontiguousarray(gxbuf[:, p:p + hh, p:p + ww, :])
    grads: dict[str, np.ndarray] = {}
    if need_param_grads:
        grads["kernel"] = grad_k
        grads["bias"] = g4.sum(axis=(0, 1, 2))
    return (grad_x[0] if single else grad_x), grads


# activations
def activation_apply(x: np.ndarray, kind: Activation | str) -> np.ndarray:
    kind = Activation(kind)
    if kind == Activation.RELU:
        return np.maximum(x, 0)
    if kind == Activation.TANH:
        return np.tanh(x)
    return np.asarray(x)


def activation_derivative(x: np.ndarray, kind: Activation | str) -> np.ndarray:
    kind = Activation(kind)
    if kind == Activation.RELU:
        return (x > 0).astype(np.asarray(x).dtype)
    if kind == Activation.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    return np.ones_like(x)


def activation_backward(grad_y: np.ndarray, x: np.ndarray, kind: Activation | str) -> np.ndarray:
    return grad_y * activation_derivative(x, kind)
