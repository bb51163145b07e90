from typing import Optional, Protocol

from src.app.domain.contracts.repositories import CheckpointRepo, ExperimentTracker, MetricsSink


class RunArtifacts(Protocol):
    """Куда пишет один запуск обучения: чекпоинты, лог метрик, (необязательный) трекер."""
    checkpoints: Optional[CheckpointRepo]
    metrics: Optional[MetricsSink]
    tracker: Optional[ExperimentTracker]

    def close(self) -> None: ...
