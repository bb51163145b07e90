"""Загрузка каталога изображений и сохранение сеток PNG. Только форматы без потерь."""
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from src.app.domain.entities.dataset import Dataset, FactorTable
from src.app.domain.errors import DataError, DimensionError
from src.app.ml.warp import resize

log = logging.getLogger(__name__)

LOSSLESS_FORMATS = {"PNG", "BMP", "TIFF", "PPM"}
FACTORS_FILE = "factors.csv"
ID_COLUMN = "id"


def quantize(images: np.ndarray) -> np.ndarray:
    """[0, 1] -> uint8: clamp, затем round-half-up при масштабе 255."""
    return np.floor(np.clip(images, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _decode(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.format not in LOSSLESS_FORMATS:
                raise DataError(f"{path.name}: {img.format} is not a lossless raster format")
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"cannot decode image file {path.name}: {e}") from e
    return arr


def center_crop(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return image[top:top + s, left:left + s]


def _load_factors(directory: Path, ids: list[str]) -> Optional[FactorTable]:
    path = directory / FACTORS_FILE
    if not path.exists():
        return None
    frame = pd.read_csv(path, dtype={ID_COLUMN: str}).set_index(ID_COLUMN)
    missing = [i for i in ids if i not in frame.index]
    if missing:
        raise DataError(f"{FACTORS_FILE} has no rows for {missing[:5]}")
    designated = "tx" if "tx" in frame.columns else None
    return FactorTable(frame.loc[ids], designated=designated)


def load_image_dir(path, target_size: int) -> Dataset:
    """
    Все файлы каталога в лексикографическом порядке: декодирование, центральный
    квадратный кроп, билинейный ресайз до target_size, масштаб [0, 1].
    Рядом может лежать factors.csv (колонка id = имя файла без расширения).
    """
    directory = Path(path)
    if not directory.is_dir():
        raise DataError(f"image directory not found: {directory}")
    files = sorted(
        p for p in directory.iterdir()
        if p.is_file() and not p.name.startswith(".") and p.name != FACTORS_FILE
    )
    if not files:
        raise DataError(f"no images in {directory}")

    images = []
    for f in files:
        img = center_crop(_decode(f))
        if img.shape[0] != target_size:
            img = resize(img, target_size)
        images.append(img)
    ids = [f.stem for f in files]
    log.info("loaded %d images from %s at %dx%d", len(ids), directory, target_size, target_size)
    return Dataset(images=np.stack(images), ids=ids, factors=_load_factors(directory, ids))


def save_image(image: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(image)).save(path, format="PNG")
    return path


def write_dataset(dataset: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for image, example_id in zip(dataset.images, dataset.ids):
        save_image(image, directory / f"{example_id}.png")
    if dataset.factors is not None:
        frame = dataset.factors.frame.copy()
        frame.index.name = ID_COLUMN
        frame.to_csv(directory / FACTORS_FILE)
    return directory


def emit_grid(images: Sequence[np.ndarray], columns: int, path) -> Path:
    """Сетка построчно (row-major), 8-битный RGB PNG."""
    images = [np.asarray(im) for im in images]
    if not images:
        raise DataError("emit_grid: zero images")
    shape = images[0].shape
    if any(im.shape != shape for im in images) or len(shape) != 3:
        raise DimensionError(f"emit_grid: images must share one (D, D, 3) shape, got {[im.shape for im in images][:4]}")
    if columns < 1:
        raise DataError(f"emit_grid: columns must be positive, got {columns}")

    cols = min(columns, len(images))
    rows = -(-len(images) // cols)
    h, w, c = shape
    canvas = np.zeros((rows * h, cols * w, c), dtype=np.float64)
    for k, im in enumerate(images):
        r, q = divmod(k, cols)
        canvas[r * h:(r + 1) * h, q * w:(q + 1) * w] = im
    return save_image(canvas, path)


def load_image(path) -> np.ndarray:
    """Одно изображение как есть, без кропа и ресайза."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    return _decode(path)
