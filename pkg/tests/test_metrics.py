import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eatkit.metrics import ConfusionMatrix, accuracy, mcc, per_class_prf, report

FIXTURE = [[6, 1], [1, 2]]  # rows true (neg, pos); TP=2, FP=1, FN=1, TN=6


def test_accumulate():
    cm = ConfusionMatrix(2).accumulate(0, 0)
    assert cm.counts.tolist() == [[1, 0], [0, 0]]
    cm = ConfusionMatrix(2).accumulate(0, 0).accumulate(1, 1)
    assert cm.counts.tolist() == [[1, 0], [0, 1]]
    with pytest.raises(ValueError):
        cm.accumulate(2, 0)
    with pytest.raises(ValueError):
        ConfusionMatrix(2).update([0, 3], [0, 1])


def test_update_matches_brute_force_tally():
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 5, 300), rng.integers(0, 5, 300)
    tally = np.zeros((5, 5), dtype=int)
    for a, b in zip(t, p):
        tally[a][b] += 1
    assert np.array_equal(ConfusionMatrix(5).update(t, p).counts, tally)


def test_binary_fixture():
    cm = ConfusionMatrix(counts=FIXTURE)
    rows, _ = per_class_prf(cm)
    pos = rows[1]
    assert accuracy(cm) == pytest.approx(0.8, abs=1e-12)
    assert pos.precision == pytest.approx(2 / 3, abs=1e-12)
    assert pos.recall == pytest.approx(2 / 3, abs=1e-12)
    assert pos.f1 == pytest.approx(2 / 3, abs=1e-12)
    assert mcc(cm) == pytest.approx(11 / 21, abs=1e-12)


def test_perfect_diagonal():
    r = report(ConfusionMatrix(counts=np.diag([3, 5, 2])))
    assert (r.accuracy, r.precision, r.recall, r.f1, r.mcc) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_single_class_prediction_mcc_zero():
    assert mcc(ConfusionMatrix(counts=[[5, 0], [7, 0]])) == 0.0
    assert mcc(ConfusionMatrix(counts=[[0, 4, 0], [0, 2, 0], [0, 9, 0]])) == 0.0


def test_absent_class_is_flagged():
    rows, _ = per_class_prf(ConfusionMatrix(counts=[[3, 1, 0], [2, 4, 0], [0, 0, 0]]))
    assert (rows[2].precision, rows[2].recall, rows[2].f1, rows[2].degenerate) == (0.0, 0.0, 0.0, True)
    assert not rows[0].degenerate


def test_uniform_two_by_two_accuracy():
    assert accuracy(ConfusionMatrix(counts=[[1, 1], [1, 1]])) == 0.5


def test_empty_matrix_is_all_zero():
    r = report(ConfusionMatrix(3))
    assert (r.accuracy, r.mcc, r.f1) == (0.0, 0.0, 0.0)


def test_binary_mcc_matches_closed_form_on_random_matrices():
    rng = np.random.default_rng(42)
    for _ in range(100):
        tn, fp, fn, tp = (int(v) for v in rng.integers(0, 50, 4))
        den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
        oracle = (tp * tn - fp * fn) / den if den else 0.0
        assert mcc(ConfusionMatrix(counts=[[tn, fp], [fn, tp]])) == pytest.approx(oracle, abs=1e-12)


square = st.integers(2, 5).flatmap(
    lambda k: st.lists(st.lists(st.integers(0, 20), min_size=k, max_size=k), min_size=k, max_size=k))


@settings(max_examples=100, deadline=None)
@given(square, st.randoms(use_true_random=False))
def test_relabeling_invariance(counts, rnd):
    counts = np.array(counts)
    perm = list(range(len(counts)))
    rnd.shuffle(perm)
    a = report(ConfusionMatrix(counts=counts))
    b = report(ConfusionMatrix(counts=counts[np.ix_(perm, perm)]))
    for x, y in zip((a.accuracy, a.precision, a.recall, a.f1, a.mcc), (b.accuracy, b.precision, b.recall, b.f1, b.mcc)):
        assert x == pytest.approx(y, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(square)
def test_bounds_and_trace_accuracy(counts):
    counts = np.array(counts)
    r = report(ConfusionMatrix(counts=counts))
    for v in (r.accuracy, r.precision, r.recall, r.f1):
        assert 0.0 <= v <= 1.0
    assert -1.0 <= r.mcc <= 1.0
    if counts.sum():
        assert r.accuracy == np.trace(counts) / counts.sum()


def test_merge_is_cellwise_and_order_free():
    rng = np.random.default_rng(3)
    a, b = ConfusionMatrix(counts=rng.integers(0, 9, (3, 3))), ConfusionMatrix(counts=rng.integers(0, 9, (3, 3)))
    assert a.merge(b) == b.merge(a)
    assert np.array_equal(a.merge(b).counts, a.counts + b.counts)


def test_report_json_sorted_and_text_table():
    r = report(ConfusionMatrix(class_names=["neg", "pos"], counts=FIXTURE))
    doc = r.to_json()
    assert doc == json.dumps(json.loads(doc), sort_keys=True)
    d = json.loads(doc)
    assert d["averaging"] == "macro" and d["mcc_kind"] == "multiclass R_K"
    text = r.to_text()
    for col in ("Precision", "Recall", "F1-score", "Accuracy", "MCC"):
        assert col in text
    assert "pos" in text


def test_rejects_bad_matrices():
    with pytest.raises(ValueError):
        ConfusionMatrix(counts=[[1, 2, 3]])
    with pytest.raises(ValueError):
        ConfusionMatrix(counts=[[1, -1], [0, 1]])
