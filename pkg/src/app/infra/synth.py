"""
Синтетический набор с известными факторами: сглаженная фигура (эллипс или прямоугольник)
на однотонном фоне. Внешний вид: hue, brightness. Геометрия: tx, ty, scale, rotation.
Ось x: ось 1 массива (строки изображения), y: ось 2.
"""
import numpy as np
import pandas as pd
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from src.app.core.schemas import SynthSpec
from src.app.domain.entities.dataset import Dataset, FactorTable
from src.app.domain.enums import ShapeKind
from src.app.domain.services.seeding import SYNTH, rng_for

FACTORS = ("tx", "ty", "scale", "rotation", "hue", "brightness")
DESIGNATED_FACTOR = "tx"


def _draw_factors(spec: SynthSpec) -> pd.DataFrame:
    # у каждого фактора свой поток: смена диапазона цвета не меняет геометрию
    n = spec.count
    values = {}
    for k, name in enumerate(FACTORS):
        rng = rng_for(spec.seed, SYNTH, k)
        lo, hi = getattr(spec, f"{name}_range")
        values[name] = rng.uniform(lo, hi, size=n)
    if spec.tx_levels is not None:
        levels = np.asarray(spec.tx_levels, dtype=np.float64)
        values["tx"] = levels[np.arange(n) % levels.size]
    ids = [f"synth-{i:05d}" for i in range(n)]
    return pd.DataFrame(values, index=pd.Index(ids, name="id"))


def shape_mask(spec: SynthSpec, tx: float, ty: float, scale: float, rotation: float) -> np.ndarray:
    """Доля покрытия пикселя фигурой, supersample x supersample выборок на пиксель."""
    d, ss = spec.image_size, spec.supersample
    offsets = (np.arange(ss) + 0.5) / ss - 0.5
    coords = (np.arange(d)[:, None] + offsets[None, :]).reshape(-1)
    centre = (d - 1) / 2.0
    px = coords[:, None] - (centre + tx)
    py = coords[None, :] - (centre + ty)
    theta = np.deg2rad(rotation)
    c, s = np.cos(theta), np.sin(theta)
    u = c * px + s * py
    v = -s * px + c * py
    rx = spec.radius[0] * d * scale
    ry = spec.radius[1] * d * scale
    if spec.shape == ShapeKind.RECTANGLE:
        inside = (np.abs(u) <= rx) & (np.abs(v) <= ry)
    else:
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    return inside.reshape(d, ss, d, ss).mean(axis=(1, 3))


def render(spec: SynthSpec, factors: pd.Series) -> tuple[np.ndarray, np.ndarray]:
    alpha = shape_mask(spec, factors["tx"], factors["ty"], factors["scale"], factors["rotation"])
    color = hsv_to_rgb(np.array([factors["hue"] % 1.0, 1.0, factors["brightness"]]))
    background = np.asarray(spec.background, dtype=np.float64)
    image = background * (1.0 - alpha[..., None]) + color * alpha[..., None]
    return image, alpha


def synth_generate(spec: SynthSpec) -> Dataset:
    frame = _draw_factors(spec)
    images = np.stack([render(spec, row)[0] for _, row in frame.iterrows()])
    return Dataset(
        images=images,
        ids=list(frame.index),
        factors=FactorTable(frame, designated=DESIGNATED_FACTOR),
    )


def foreground_weight(image: np.ndarray, background) -> np.ndarray:
    return np.linalg.norm(np.asarray(image) - np.asarray(background, dtype=np.float64), axis=-1)


def shape_centroid(image: np.ndarray, background) -> tuple[float, float]:
    """Центр масс отличия от фона, (x, y) в пикселях."""
    w = foreground_weight(image, background)
    total = w.sum()
    if total <= 0:
        return float("nan"), float("nan")
    xs = np.arange(w.shape[0])
    ys = np.arange(w.shape[1])
    return float((w.sum(axis=1) * xs).sum() / total), float((w.sum(axis=0) * ys).sum() / total)


def shape_hue(image: np.ndarray, background, threshold: float = 0.5) -> float:
    """Тон средней окраски пикселей, заметно отличающихся от фона, в [0, 1)."""
    w = foreground_weight(image, background)
    if w.max() <= 0:
        return float("nan")
    mask = w >= threshold * w.max()
    mean_color = np.clip(np.asarray(image)[mask].mean(axis=0), 0.0, 1.0)
    return float(rgb_to_hsv(mean_color)[0])


def hue_distance(a: float, b: float) -> float:
    """Круговое расстояние между тонами в [0, 1), результат в градусах."""
    d = abs(a - b) % 1.0
    return 360.0 * min(d, 1.0 - d)
