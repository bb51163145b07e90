import csv
from pathlib import Path

import pandas as pd

from src.app.domain.entities.train_result import MetricsRecord

COLUMNS = ("iteration", "mse", "log_joint_mean", "wall_ms")


def format_record(record: MetricsRecord) -> list[str]:
    # repr даёт кратчайшую точную запись float, строки воспроизводимы побайтно
    return [str(record.iteration), repr(float(record.mse)), repr(float(record.log_joint_mean)), f"{record.wall_ms:.3f}"]


class CsvMetricsLog:
    """Append-only metrics.csv: по строке на итерацию, заголовок при создании файла."""

    def __init__(self, path: Path, truncate: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if truncate or not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(COLUMNS)

    def append(self, record: MetricsRecord) -> None:
        with self.path.open("a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(format_record(record))


def read_metrics(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
