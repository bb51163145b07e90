"""
Деформирующее отображение и билинейная интерполяция.

X(x, y) = sum_ij X_a(i, j) * max(0, 1 - |u - i|) * max(0, 1 - |v - j|),  u = x + dx, v = y + dy.
Сумма считается по <= 4 соседям; координаты вне сетки дают нулевой вклад (без clamp).
"""
import numpy as np

from src.app.domain.errors import DimensionError
from src.app.domain.value_objects import DisplacementField

Coords = tuple[np.ndarray, np.ndarray]

# (смещение угла, знак производной веса по координате)
_CORNERS = ((0, -1.0), (1, 1.0))


def _as_field(field) -> DisplacementField:
    return field if isinstance(field, DisplacementField) else DisplacementField(np.asarray(field))


def _as_batch_image(source: np.ndarray) -> tuple[np.ndarray, bool]:
    src = np.asarray(source)
    if src.ndim == 3:
        return src[None], True
    if src.ndim != 4:
        raise DimensionError(f"source image: expected (D_x, D_y, C) or (N, D_x, D_y, C), got shape {src.shape}")
    return src, False


def base_grid(d_x: int, d_y: int, dtype=np.float64) -> Coords:
    x = np.arange(d_x, dtype=dtype)[:, None] * np.ones((1, d_y), dtype=dtype)
    y = np.ones((d_x, 1), dtype=dtype) * np.arange(d_y, dtype=dtype)[None, :]
    return x, y


def deform_coords(field) -> Coords:
    """(u, v) = (x + dx, y + dy) на регулярной сетке; формы (N, D_x, D_y)."""
    f = _as_field(field)
    x, y = base_grid(*f.spatial_shape, dtype=f.data.dtype)
    return x[None] + f.dx, y[None] + f.dy


def _check_coords(src: np.ndarray, coords: Coords) -> tuple[np.ndarray, np.ndarray]:
    u, v = (np.asarray(c) for c in coords)
    if u.ndim == 2:
        u, v = u[None], v[None]
    if u.shape != v.shape or u.ndim != 3:
        raise DimensionError(f"coords: u {u.shape} and v {v.shape} must share an (N, H, W) shape")
    if u.shape[0] != src.shape[0]:
        raise DimensionError(f"coords batch {u.shape} does not match source batch {src.shape}")
    return u, v


def _neighbors(src, u, v):
    n, d_x, d_y, _ = src.shape
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0
    bidx = np.broadcast_to(np.arange(n)[:, None, None], u.shape)
    for di, su in _CORNERS:
        wu = fu if di else 1.0 - fu
        ii = i0 + di
        ok_i = (ii >= 0) & (ii < d_x)
        for dj, sv in _CORNERS:
            wv = fv if dj else 1.0 - fv
            jj = j0 + dj
            valid = ok_i & (jj >= 0) & (jj < d_y)
            ic = np.clip(ii, 0, d_x - 1)
            jc = np.clip(jj, 0, d_y - 1)
            yield bidx, ic, jc, valid, wu, wv, su, sv


def bilinear_sample(source: np.ndarray, coords: Coords) -> np.ndarray:
    src, single = _as_batch_image(source)
    u, v = _check_coords(src, coords)

    out = np.zeros(u.shape + (src.shape[-1],), dtype=np.result_type(src, u))
    for bidx, ic, jc, valid, wu, wv, _, _ in _neighbors(src, u, v):
        w = wu * wv * valid
        out += w[..., None] * src[bidx, ic, jc]
    return out[0] if single else out


def warp(source: np.ndarray, field) -> np.ndarray:
    f = _as_field(field)
    src, single = _as_batch_image(source)
    if src.shape[1:3] != f.spatial_shape or src.shape[0] != f.data.shape[0]:
        raise DimensionError(f"warp: image {src.shape} and displacement field {f.data.shape} disagree")
    out = bilinear_sample(src, deform_coords(f))
    return out[0] if single else out


def warp_backward(
    source: np.ndarray,
    field,
    grad_out: np.ndarray,
    need_source_grad: bool = True,
) -> tuple[np.ndarray | None, np.ndarray]:
    """
    Частные производные билинейной формулы: (grad по изображению, grad по (dx, dy)).
    В точках излома (u или v целые) субградиент по координате берётся равным 0.
    """
    f = _as_field(field)
    src, single = _as_batch_image(source)
    g, _ = _as_batch_image(grad_out)
    u, v = deform_coords(f)
    if g.shape[:3] != u.shape or g.shape[-1] != src.shape[-1]:
        raise DimensionError(f"warp backward: gradient {g.shape} does not match output {u.shape + (src.shape[-1],)}")

    grad_src = np.zeros_like(src, dtype=np.result_type(src, g)) if need_source_grad else None
    gu = np.zeros(u.shape, dtype=np.result_type(src, g, u))
    gv = np.zeros_like(gu)
    for bidx, ic, jc, valid, wu, wv, su, sv in _neighbors(src, u, v):
        if grad_src is not None:
            w = wu * wv * valid
            np.add.at(grad_src, (bidx, ic, jc), w[..., None] * g)
        dot = np.sum(src[bidx, ic, jc] * g, axis=-1) * valid
        gu += su * wv * dot
        gv += sv * wu * dot

    gu[u == np.floor(u)] = 0.0
    gv[v == np.floor(v)] = 0.0
    grad_field = np.stack([gu, gv], axis=-1)
    if single:
        return (None if grad_src is None else grad_src[0]), grad_field[0]
    return grad_src, grad_field


def resize(image: np.ndarray, size: int) -> np.ndarray:
    """Квадратное изображение -> size x size той же билинейной выборкой (центры пикселей совмещены)."""
    src, single = _as_batch_image(image)
    s_x, s_y = src.shape[1:3]
    x, y = base_grid(size, size, dtype=np.float64)
    u = np.clip((x + 0.5) * (s_x / size) - 0.5, 0.0, s_x - 1)
    v = np.clip((y + 0.5) * (s_y / size) - 0.5, 0.0, s_y - 1)
    n = src.shape[0]
    out = bilinear_sample(src, (np.broadcast_to(u, (n, size, size)), np.broadcast_to(v, (n, size, size))))
    return out[0] if single else out
