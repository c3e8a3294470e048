"""Classification metrics and single-frame latency."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from ..model.profile import count_flops, count_params


@dataclass
class MetricsReport:
    overall_accuracy: float
    per_snr_accuracy: dict
    confusion: np.ndarray  # rows: true class, columns: predicted class
    confusion_per_snr: dict
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    params: int | None = None
    flops: int | None = None
    inference_time_per_sample: float | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_snr_accuracy": {str(k): v for k, v in self.per_snr_accuracy.items()},
            "support": self.support.tolist(),
            "params": self.params,
            "flops": self.flops,
            "inference_time_per_sample": self.inference_time_per_sample,
        }


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def scores_from_confusion(cm: np.ndarray):
    """Per-class ``(precision, recall, f1)``; any zero denominator gives 0."""
    tp = np.diag(cm).astype(np.float64)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def metrics_from_predictions(y_true, y_pred, snr, num_classes: int, snr_grid=None) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    snr = np.asarray(snr, dtype=np.int64)
    if y_true.size == 0:
        raise ContractError("metrics: empty test set")
    if y_true.shape != y_pred.shape or y_true.shape != snr.shape:
        raise ContractError("metrics: labels, predictions and SNRs must align")
    grid = tuple(snr_grid) if snr_grid is not None else tuple(int(s) for s in np.unique(snr))
    cm = confusion_matrix(y_true, y_pred, num_classes)
    p, r, f1 = scores_from_confusion(cm)
    per_snr, cms = {}, {}
    for s in grid:
        m = snr == s
        cms[int(s)] = confusion_matrix(y_true[m], y_pred[m], num_classes)
        per_snr[int(s)] = float(np.mean(y_pred[m] == y_true[m])) if m.any() else 0.0
    return MetricsReport(
        overall_accuracy=float(np.mean(y_true == y_pred)),
        per_snr_accuracy=per_snr,
        confusion=cm,
        confusion_per_snr=cms,
        precision=p,
        recall=r,
        f1=f1,
        support=cm.sum(axis=1),
        macro_precision=float(np.mean(p)),
        macro_recall=float(np.mean(r)),
        macro_f1=float(np.mean(f1)),
    )


def measure_latency(model, batch: int = 1, repeats: int = 100, warmup: int = 10, seed: int = 0) -> float:
    """Median wall time per sample of eval-mode forwards on random frames."""
    if repeats < 1:
        raise ContractError("latency: repeats must be >= 1")
    x = np.random.default_rng(seed).standard_normal((batch, model.cfg.T, 2)).astype(model.dtype)
    for _ in range(warmup):
        model.forward(x, "eval")
    times = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter()
        model.forward(x, "eval")
        times[i] = time.perf_counter() - t0
    return float(np.median(times)) / batch


def evaluate_metrics(model, test_set, batch_size: int = 256, profile: bool = True, latency_repeats: int = 100):
    """Eval-mode metrics over ``test_set``, optionally with params/FLOPs/latency."""
    if len(test_set) == 0:
        raise ContractError("evaluate: empty test set")
    pred = np.argmax(model.predict(test_set.x, batch_size), axis=1)
    rep = metrics_from_predictions(test_set.labels, pred, test_set.snr, test_set.num_classes, test_set.snr_grid)
    if profile:
        rep.params = count_params(model)[0]
        rep.flops = count_flops(model)[0]
        rep.inference_time_per_sample = measure_latency(model, repeats=latency_repeats)
    return rep
