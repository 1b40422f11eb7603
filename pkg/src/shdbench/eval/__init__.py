from .metrics import ThresholdMetrics, auprc, auroc, macro_auroc, threshold_metrics
from .projection import ProjectionConfig, project_embeddings
from .report import (
    AlignmentError,
    MetricsReport,
    PredictionSet,
    SweepResult,
    UndefinedMetricError,
    macro_report,
    threshold_sweep,
)

__all__ = [
    "AlignmentError",
    "MetricsReport",
    "PredictionSet",
    "ProjectionConfig",
    "SweepResult",
    "ThresholdMetrics",
    "UndefinedMetricError",
    "auprc",
    "auroc",
    "macro_auroc",
    "macro_report",
    "project_embeddings",
    "threshold_metrics",
    "threshold_sweep",
]
