import csv
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iqshrink.errors import ContractError
from iqshrink.gradsuite import TINY_MODEL
from iqshrink.harness import (
    emit_reports,
    evaluate_metrics,
    measure_latency,
    metrics_from_predictions,
    run_ablation,
    run_crossval,
)
from iqshrink.harness.crossval import mean_std
from iqshrink.harness.metrics import confusion_matrix, scores_from_confusion
from iqshrink.harness.reports import read_confusion
from iqshrink.model import TrainConfig, build_model
from iqshrink.signals import DatasetSpec, generate_dataset

TINY_TC = TrainConfig(batch_size=16, max_epochs=1)


@pytest.fixture(scope="module")
def tiny_data():
    return generate_dataset(DatasetSpec(schemes=("BPSK", "QPSK"), snr_grid_db=(0, 20), frames_per_cell=10, T=16))


# --------------------------------------------------------------- metrics


def test_two_class_hand_oracle():
    cm = np.array([[8, 2], [3, 7]])
    y_true = np.repeat([0, 0, 1, 1], [8, 2, 3, 7])
    y_pred = np.repeat([0, 1, 0, 1], [8, 2, 3, 7])
    rep = metrics_from_predictions(y_true, y_pred, np.zeros(20, int), 2)
    np.testing.assert_array_equal(rep.confusion, cm)
    assert rep.overall_accuracy == 0.75
    assert rep.macro_recall == pytest.approx(0.75, abs=1e-15)
    # Precisions 8/11 and 7/9; F1s 16/21 and 14/19.
    assert rep.macro_precision == pytest.approx((8 / 11 + 7 / 9) / 2, abs=1e-15)
    assert rep.macro_precision == pytest.approx(0.752525, abs=1e-6)
    assert rep.macro_f1 == pytest.approx((16 / 21 + 14 / 19) / 2, abs=1e-15)
    assert rep.macro_f1 == pytest.approx(0.749373, abs=1e-6)


def test_perfect_predictions():
    y = np.array([0, 1, 2, 2, 1, 0])
    rep = metrics_from_predictions(y, y, np.zeros(6, int), 3)
    assert rep.overall_accuracy == rep.macro_precision == rep.macro_recall == rep.macro_f1 == 1.0


def test_zero_division_gives_zero():
    p, r, f1 = scores_from_confusion(np.array([[2, 0], [3, 0]]))
    assert p[1] == r[1] == f1[1] == 0.0


@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(1, 4))
def test_accounting_identities(seed, K, per_class):
    rng = np.random.default_rng(seed)
    grid = (-5, 0, 10)
    y = np.repeat(np.arange(K), per_class * len(grid))
    snr = np.tile(np.repeat(grid, per_class), K)
    pred = rng.integers(0, K, y.size)
    rep = metrics_from_predictions(y, pred, snr, K, grid)
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), rep.support)
    np.testing.assert_array_equal(rep.support, per_class * len(grid))
    weighted = sum(rep.per_snr_accuracy[s] * np.sum(snr == s) for s in grid) / y.size
    assert weighted == pytest.approx(rep.overall_accuracy, abs=1e-12)
    # Equal supports make macro recall the overall accuracy.
    assert abs(rep.macro_recall - rep.overall_accuracy) <= 1e-12
    assert sum(rep.confusion_per_snr.values()).tolist() == rep.confusion.tolist()


def test_metrics_contract():
    with pytest.raises(ContractError):
        metrics_from_predictions([], [], [], 2)
    with pytest.raises(ContractError):
        metrics_from_predictions([0, 1], [0], [0, 0], 2)


def test_latency_convention():
    m = build_model(TINY_MODEL)
    one = measure_latency(m, batch=1, repeats=100)
    many = measure_latency(m, batch=64, repeats=100)
    assert 0 < many <= one


def test_mean_std_hand_aggregation():
    vals = [0.61, 0.62, 0.64, 0.6, 0.63]
    m, s = mean_std(vals)
    mu = sum(vals) / 5
    assert m == pytest.approx(mu, abs=1e-15)
    assert s == pytest.approx((sum((v - mu) ** 2 for v in vals) / 4) ** 0.5, abs=1e-15)


# -------------------------------------------------------- crossval / ablation


def test_crossval_mechanics(tiny_data):
    res = run_crossval(tiny_data, TINY_MODEL, TINY_TC, folds=5, seed=0)
    allidx = np.concatenate(res.fold_indices)
    assert np.array_equal(np.sort(allidx), np.arange(len(tiny_data)))
    assert len(res.reports) == 5 and len(res.table()) == 5
    summary = res.summary()
    accs = [r.overall_accuracy for r in res.reports]
    assert summary["overall_accuracy"] == mean_std(accs)
    shuffled = [res.reports[i] for i in (3, 1, 4, 0, 2)]
    from iqshrink.harness.crossval import summarize

    for k, (m, s) in summarize(shuffled).items():
        assert m == pytest.approx(summary[k][0], abs=1e-12) and s == pytest.approx(summary[k][1], abs=1e-12)


def test_ablation_rows_and_determinism(tiny_data):
    grid = [("full", TINY_MODEL), ("no_denoise", replace(TINY_MODEL, depth_a=0, depth_b=0))]

    def run():
        return run_ablation(grid, tiny_data, TINY_TC, seeds=(0, 1), latency_repeats=3)

    rows = run()
    assert [r.seed for r in rows] == ["0", "1", "mean", "0", "1", "mean"]
    assert rows[0].params > rows[3].params
    again = run()
    for a, b in zip(rows, again):
        ra, rb = a.as_record(), b.as_record()
        ra.pop("inference_time_per_sample")
        rb.pop("inference_time_per_sample")
        assert ra == rb
    mean = rows[2]
    assert mean.avg_accuracy == pytest.approx((rows[0].avg_accuracy + rows[1].avg_accuracy) / 2)
    for r in rows:
        assert r.max_accuracy >= r.avg_accuracy - 1e-12


# --------------------------------------------------------------- reports


def test_reports_schema_and_byte_determinism(tmp_path, tiny_data):
    m = build_model(TINY_MODEL)
    rep = evaluate_metrics(m, tiny_data, profile=False)
    a = emit_reports(tmp_path / "a", metrics=rep)
    b = emit_reports(tmp_path / "b", metrics=rep)
    for pa, pb in zip(a, b):
        assert pa.name == pb.name and pa.read_bytes() == pb.read_bytes()
    with open(tmp_path / "a" / "accuracy_vs_snr.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["snr_db", "accuracy"] and [int(r[0]) for r in rows[1:]] == list(tiny_data.snr_grid)
    pooled = read_confusion(tmp_path / "a" / "confusion_pooled.csv")
    np.testing.assert_array_equal(pooled.sum(axis=1), rep.support)
    for s in tiny_data.snr_grid:
        np.testing.assert_array_equal(read_confusion(tmp_path / "a" / f"confusion_snr_{s}.csv"), rep.confusion_per_snr[s])
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["metrics"]["overall_accuracy"] == rep.overall_accuracy


def test_crossval_report_layout(tmp_path, tiny_data):
    res = run_crossval(tiny_data, TINY_MODEL, TINY_TC, folds=3, seed=1)
    emit_reports(tmp_path, crossval=res)
    with open(tmp_path / "crossval.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["fold", "overall_accuracy", "macro_precision", "macro_recall", "macro_f1"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "mean", "std"]
    assert float(rows[4][1]) == res.summary()["overall_accuracy"][0]


def test_confusion_matrix_orientation():
    cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    np.testing.assert_array_equal(cm, [[0, 2], [0, 1]])
