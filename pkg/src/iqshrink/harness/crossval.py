"""Stratified k-fold cross-validation."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..model.network import ModelConfig, build_model
from ..model.train import TrainConfig, TrainingLog, fit
from ..signals.dataset import Dataset, stratified_folds
from .metrics import MetricsReport, evaluate_metrics

SUMMARY_METRICS = ("overall_accuracy", "macro_precision", "macro_recall", "macro_f1")


@dataclass
class CrossValResult:
    fold_indices: list
    reports: list
    logs: list

    def table(self) -> list[tuple]:
        """``(fold, overall_accuracy, macro_P, macro_R, macro_F1)`` per fold, 1-based."""
        return [(k + 1,) + tuple(getattr(r, m) for m in SUMMARY_METRICS) for k, r in enumerate(self.reports)]

    def summary(self) -> dict:
        return summarize(self.reports)


def mean_std(values) -> tuple[float, float]:
    """Mean and sample (n - 1) standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    return float(np.mean(v)), float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def summarize(reports) -> dict:
    return {m: mean_std([getattr(r, m) for r in reports]) for m in SUMMARY_METRICS}


def run_crossval(
    dataset: Dataset,
    cfg: ModelConfig,
    tc: TrainConfig,
    folds: int = 5,
    seed: int = 0,
    dtype=np.float32,
    on_fold=None,
) -> CrossValResult:
    """Fold ``k`` is held out: it drives early stopping and is what gets scored.

    Every fold restarts from the same seeded initialisation.
    """
    fold_idx = stratified_folds(dataset, folds, seed)
    reports: list[MetricsReport] = []
    logs: list[TrainingLog] = []
    all_idx = np.arange(len(dataset))
    for k, val_idx in enumerate(fold_idx):
        train_idx = np.setdiff1d(all_idx, val_idx, assume_unique=True)
        model = build_model(replace(cfg, num_classes=dataset.num_classes, T=dataset.T), dtype)
        val = dataset.subset(val_idx)
        logs.append(fit(model, dataset.subset(train_idx), val, tc))
        reports.append(evaluate_metrics(model, val, profile=False))
        if on_fold is not None:
            on_fold(k, reports[-1])
    return CrossValResult(fold_idx, reports, logs)
