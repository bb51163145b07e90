from pathlib import Path
from typing import Any, Mapping, Optional, Protocol

from src.app.domain.entities.train_result import MetricsRecord, TrainResult


class CheckpointRepo(Protocol):
    def save(self, name: str, result: TrainResult) -> Path: ...
    def load(self, name: str) -> TrainResult: ...


class MetricsSink(Protocol):
    def append(self, record: MetricsRecord) -> None: ...


class ExperimentTracker(Protocol):
    def log_params(self, params: Mapping[str, Any]) -> None: ...
    def log_metrics(self, record: MetricsRecord) -> None: ...
    def close(self) -> None: ...
