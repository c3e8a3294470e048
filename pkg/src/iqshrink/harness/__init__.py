"""Metrics, cross-validation, ablation sweeps and report files."""
from .ablation import AblationRow, run_ablation
from .crossval import CrossValResult, mean_std, run_crossval, summarize
from .metrics import MetricsReport, evaluate_metrics, measure_latency, metrics_from_predictions
from .reports import emit_reports

__all__ = [
    "AblationRow",
    "CrossValResult",
    "MetricsReport",
    "emit_reports",
    "evaluate_metrics",
    "mean_std",
    "measure_latency",
    "metrics_from_predictions",
    "run_ablation",
    "run_crossval",
    "summarize",
]
