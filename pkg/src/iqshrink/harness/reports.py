"""CSV and JSON report emission.

Numbers are written with ``repr`` so files round-trip exactly.  Given
identical inputs, every file is byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .ablation import AblationRow
from .crossval import CrossValResult
from .metrics import MetricsReport


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return v


def _write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    try:
        path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path: Path, obj) -> Path:
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
    return path


def write_accuracy_vs_snr(path, report: MetricsReport) -> Path:
    return _write_csv(Path(path), ["snr_db", "accuracy"], sorted(report.per_snr_accuracy.items()))


def write_confusions(out_dir, report: MetricsReport) -> list[Path]:
    out_dir = Path(out_dir)
    K = report.confusion.shape[0]
    header = ["true_class"] + [f"pred_{k}" for k in range(K)]
    paths = [_write_csv(out_dir / "confusion_pooled.csv", header, [[k, *row] for k, row in enumerate(report.confusion)])]
    for s, cm in sorted(report.confusion_per_snr.items()):
        paths.append(_write_csv(out_dir / f"confusion_snr_{s}.csv", header, [[k, *row] for k, row in enumerate(cm)]))
    return paths


def read_confusion(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64)


def write_training_curves(path, log) -> Path:
    return _write_csv(Path(path), ["epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr"], log.rows())


def write_ablation(path, rows: list[AblationRow]) -> Path:
    recs = [r.as_record() for r in rows]
    header = list(recs[0].keys()) if recs else ["name"]
    return _write_csv(Path(path), header, [[rec[h] for h in header] for rec in recs])


def write_crossval(path, result: CrossValResult) -> Path:
    header = ["fold", "overall_accuracy", "macro_precision", "macro_recall", "macro_f1"]
    rows = list(result.table())
    summary = result.summary()
    rows.append(["mean"] + [summary[h][0] for h in header[1:]])
    rows.append(["std"] + [summary[h][1] for h in header[1:]])
    return _write_csv(Path(path), header, rows)


def emit_reports(out_dir, metrics: MetricsReport | None = None, log=None, ablation=None, crossval=None, extra=None):
    """Write whichever reports are given; returns the list of paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    summary = dict(extra or {})
    if metrics is not None:
        paths.append(write_accuracy_vs_snr(out_dir / "accuracy_vs_snr.csv", metrics))
        paths.extend(write_confusions(out_dir, metrics))
        summary["metrics"] = metrics.summary()
    if log is not None:
        paths.append(write_training_curves(out_dir / "training_curves.csv", log))
        summary["training"] = {
            "best_epoch": log.best_epoch,
            "best_val_loss": log.best_val_loss,
            "stopped_epoch": log.stopped_epoch,
            "stop_reason": log.stop_reason,
        }
    if ablation is not None:
        paths.append(write_ablation(out_dir / "ablation.csv", ablation))
        summary["ablation"] = [r.as_record() for r in ablation]
    if crossval is not None:
        paths.append(write_crossval(out_dir / "crossval.csv", crossval))
        summary["crossval"] = {
            "folds": [dict(zip(["fold", "overall_accuracy", "macro_precision", "macro_recall", "macro_f1"], row)) for row in crossval.table()],
            "summary": {k: {"mean": m, "std": s} for k, (m, s) in crossval.summary().items()},
        }
    paths.append(write_json(out_dir / "summary.json", summary))
    return paths
