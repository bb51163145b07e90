import logging
from typing import Any, Mapping, Optional

from src.app.core.settings import Settings
from src.app.domain.entities.train_result import MetricsRecord

log = logging.getLogger(__name__)


class MlflowTracker:
    def __init__(self, tracking_uri: str, experiment: str, run_name: Optional[str] = None):
        import mlflow

        self._mlflow = mlflow
        mlflow.set_tracking_uri(tracking_uri)
        mlflow.set_experiment(experiment)
        self._run = mlflow.start_run(run_name=run_name)
        log.info("mlflow run %s started at %s", self._run.info.run_id, tracking_uri)

    def log_params(self, params: Mapping[str, Any]) -> None:
        self._mlflow.log_params({k: str(v) for k, v in params.items()})

    def log_metrics(self, record: MetricsRecord) -> None:
        self._mlflow.log_metrics(
            {"mse": record.mse, "log_joint_mean": record.log_joint_mean, "wall_ms": record.wall_ms},
            step=record.iteration,
        )

    def close(self) -> None:
        self._mlflow.end_run()


def make_tracker(settings: Settings, run_name: Optional[str] = None) -> Optional[MlflowTracker]:
    if not settings.MLFLOW_TRACKING_URI:
        return None
    return MlflowTracker(settings.MLFLOW_TRACKING_URI, settings.MLFLOW_EXPERIMENT, run_name=run_name)
