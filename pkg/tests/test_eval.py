import math
from types import SimpleNamespace

import numpy as np
import pytest

from mtcbench.eval import (
    EvalReport,
    confusion,
    cost_report,
    evaluate,
    rates,
    recall_metric,
    roc,
)
from mtcbench.exceptions import DomainError, MeasurementError, ShapeError

from oracles import mann_whitney_auc, recall_literal


def _costs(*rows):
    return [SimpleNamespace(infer_time=a, train_time=b, size_bytes=c) for a, b, c in rows]


# -- recall ------------------------------------------------------------------


def test_recall_examples():
    assert float(recall_metric([3.0, 7.0, 1.5], [3.0, 7.0, 1.5])) == 1.0
    assert recall_metric([1.0, 4.0], [2.0, 4.0]).value == pytest.approx(0.9354143466934853, abs=1e-12)
    assert round(recall_metric([1.0, 4.0], [2.0, 4.0]).value, 5) == 0.93541
    r = recall_metric([3.0], [1.0])
    assert r.value == 0.0 and r.clamped


def test_recall_matches_literal_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(1, 30))
        g = rng.uniform(0.5, 200, size=m)
        g_hat = g * rng.uniform(0.0, 2.2, size=m)
        assert abs(recall_metric(g_hat, g).value - recall_literal(g_hat, g)) < 1e-12


def test_recall_errors():
    with pytest.raises(ShapeError):
        recall_metric([1.0, 2.0], [1.0])
    with pytest.raises(ShapeError):
        recall_metric([], [])
    with pytest.raises(DomainError):
        recall_metric([1.0], [0.0])
    with pytest.raises(DomainError):
        recall_metric([1.0], [-2.0])


# -- confusion and rates -----------------------------------------------------


def test_confusion_example():
    c = confusion([1, 0, 0, 1], [1, 1, 0, 0])
    assert (c.tp, c.fn, c.tn, c.fp) == (1, 1, 1, 1)
    r = rates(c)
    assert (r.tpr, r.tnr, r.accuracy) == (0.5, 0.5, 0.5)
    r = rates(confusion([0, 1, 1], [0, 1, 1]))
    assert (r.tpr, r.tnr, r.accuracy) == (1.0, 1.0, 1.0)


def test_undefined_rates_are_flagged():
    r = rates(confusion([0, 1, 0], [0, 0, 0]))
    assert math.isnan(r.tpr) and "tpr" in r.undefined
    assert r.tnr == pytest.approx(2 / 3)
    r = rates(confusion([1, 1], [1, 1]))
    assert math.isnan(r.tnr) and r.undefined == ("tnr",)


def test_confusion_rejects_non_bits():
    with pytest.raises((DomainError, ShapeError)):
        confusion([0, 2], [0, 1])
    with pytest.raises(ShapeError):
        confusion([0, 1, 1], [0, 1])


def test_accuracy_between_rates():
    rng = np.random.default_rng(1)
    for _ in range(200):
        y = rng.integers(0, 2, 50)
        p = rng.integers(0, 2, 50)
        r = rates(confusion(p, y))
        if not r.undefined:
            assert min(r.tpr, r.tnr) - 1e-15 <= r.accuracy <= max(r.tpr, r.tnr) + 1e-15


# -- ROC -----------------------------------------------------------------------


def test_roc_perfect_scores():
    y = np.array([0, 1, 1, 0, 1])
    curve = roc(y.astype(float), y)
    assert curve.auc == 1.0
    assert curve.points[0] == (0.0, 0.0) and curve.points[-1] == (1.0, 1.0)


def test_roc_random_scores_near_half():
    rng = np.random.default_rng(2)
    y = rng.permutation(np.repeat([0, 1], 5000))
    assert abs(roc(rng.random(10_000), y).auc - 0.5) < 0.02


def test_roc_matches_rank_oracle_and_reverses():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 200))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        # coarse scores force ties
        s = np.round(rng.random(n), int(rng.integers(1, 4)))
        c = roc(s, y)
        assert abs(c.auc - mann_whitney_auc(s, y)) < 1e-9
        assert abs(roc(-s, y).auc - (1 - c.auc)) < 1e-12
        assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
        assert c.points[-1] == (1.0, 1.0)


def test_roc_errors(tmp_path):
    with pytest.raises(DomainError):
        roc([0.1, 0.4], [1, 1])
    with pytest.raises(ShapeError):
        roc([0.1, 0.4], [1])
    c = roc([0.9, 0.1, 0.5], [1, 0, 1])
    path = tmp_path / "roc.csv"
    c.to_csv(path, header_comment="seed=1")
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# seed=1", "fpr,tpr"]
    assert len(lines) == 2 + len(c.fpr)


# -- costs ---------------------------------------------------------------------


def test_cost_report_example():
    rep = cost_report(_costs((1, 1, 1), (2, 2, 2), (2, 2, 2), (5, 5, 5)), names=("a", "b", "c", "d"))
    assert np.allclose(rep.normalized[:, 2], [0.1, 0.2, 0.2, 0.5], atol=1e-15)
    assert rep.as_dict()["d"]["size"] == 0.5


def test_cost_report_sums_and_symmetry():
    rng = np.random.default_rng(4)
    rows = [tuple(rng.uniform(1e-6, 1e3, 3)) for _ in range(5)]
    rep = cost_report(_costs(*rows), names=tuple("abcde"))
    assert np.all(np.abs(rep.normalized.sum(axis=0) - 1.0) <= 1e-12)
    perm = [3, 0, 4, 1, 2]
    rep_p = cost_report(_costs(*[rows[i] for i in perm]), names=tuple("abcde"[i] for i in perm))
    assert np.allclose(rep_p.normalized, rep.normalized[perm], rtol=0, atol=1e-15)
    rep_s = cost_report(_costs(*[tuple(7.0 * v for v in r) for r in rows]), names=tuple("abcde"))
    assert np.allclose(rep_s.normalized, rep.normalized, rtol=1e-12)


def test_published_cost_rows_sum_to_one():
    # RNN, LSTM, GRU, TCN shares of inference time, training time and size
    table = np.array([[0.222, 0.324, 0.271, 0.183], [0.304, 0.145, 0.213, 0.338], [0.167, 0.229, 0.181, 0.423]])
    assert np.allclose(table.sum(axis=1), 1.0, atol=1e-3)
    rep = cost_report(_costs(*table.T.tolist()), names=("rnn", "lstm", "gru", "tcn"))
    assert np.allclose(rep.normalized, table.T / table.sum(axis=1), atol=1e-15)


def test_cost_report_errors():
    with pytest.raises(MeasurementError):
        cost_report(_costs((1, 1, 1)), names=("a",))
    with pytest.raises(MeasurementError):
        cost_report(_costs((1, 1, 1), (0, 1, 1)), names=("a", "b"))
    with pytest.raises(MeasurementError):
        cost_report(_costs((1, 1, 1), (None, 1, 1)), names=("a", "b"))


# -- reports -------------------------------------------------------------------


def test_eval_report_round_trip():
    rep = EvalReport("tcn", 0.9, 0.5, 0.99, 0.98, 0.8, infer_time=1e-4, train_time=2.0, size_bytes=100.0,
                     undefined=("auc",))
    back = EvalReport.from_dict(rep.to_dict())
    assert back == rep
    assert rep.csv_row().count(",") == EvalReport.csv_header().count(",")
    assert "model=tcn" in rep.to_record()


def test_evaluate_on_trained_model():
    from mtcbench.predictors import ModelSpec, TrainConfig, train
    from mtcbench.traffic import QuasiPeriodicConfig, gen_quasiperiodic_trace, make_dataset

    cfg = QuasiPeriodicConfig(n_devices=3, n_slots=3000, t_min=20, t_max=40, q=0.5)
    ds = make_dataset(gen_quasiperiodic_trace(cfg, seed=0), 8)
    for spec in (ModelSpec("rnn", hidden_sizes=(4,)), ModelSpec("arima", arima_order=(1, 0, 0))):
        model = train(spec, TrainConfig(epochs=1), ds, time_inference=False)
        rep, scores, labels = evaluate(model, ds.test, return_scores=True)
        assert len(scores) == len(labels) == rep.n_cls
        assert np.array_equal(labels, ds.test.y_cls)
        for name in EvalReport.QUALITY:
            v = getattr(rep, name)
            assert math.isnan(v) or 0.0 <= v <= 1.0
