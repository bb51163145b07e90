from pathlib import Path
from typing import Optional

from src.app.infra.checkpoint import FileCheckpointRepo
from src.app.infra.metrics_log import CsvMetricsLog
from src.app.infra.tracking import MlflowTracker

METRICS_FILE = "metrics.csv"


class DirectoryArtifacts:
    """Артефакты запуска в одном каталоге: <out>/checkpoint.dgn, <out>/metrics.csv."""

    def __init__(self, out_dir, fresh_metrics: bool = True, tracker: Optional[MlflowTracker] = None):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.checkpoints = FileCheckpointRepo(self.out_dir)
        self.metrics = CsvMetricsLog(self.out_dir / METRICS_FILE, truncate=fresh_metrics)
        self.tracker = tracker

    def close(self) -> None:
        if self.tracker is not None:
            self.tracker.close()
