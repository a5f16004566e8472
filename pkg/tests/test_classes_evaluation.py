import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semfuse.classes import CNN_CLASSES, EVAL_ABBREVIATIONS, EVAL_CLASSES, ClassTable
from semfuse.errors import ConfigError, MismatchedLength
from semfuse.evaluation import (confusion_counts, evaluate, evaluate_map, format_confusion, format_metrics,
                                majority_vote_voxels, report_from_confusion)


# ------------------------------------------------------------ class table

def test_default_merge_twelve_to_seven():
    t = ClassTable()
    assert t.classes == 12 and len(t.eval_names) == 7
    m = t.merge_index
    assert m[t.index("sky")] == -1 and m[t.index("unlabeled")] == -1
    assert m[t.index("sign")] == m[t.index("pole")]
    assert m[t.index("rider")] == m[t.index("pedestrian")]
    assert m[t.index("fence")] == m[t.index("building")]


def test_merge_probs_sums_and_drops():
    t = ClassTable()
    p = np.zeros((3, 12))
    p[0, t.index("sign")], p[0, t.index("pole")] = 0.3, 0.3
    p[0, t.index("sky")] = 0.4
    p[1, t.index("sky")] = 1.0
    p[2, t.index("rider")] = 1.0
    merged, keep = t.merge_probs(p)
    assert keep.tolist() == [True, False, True]
    assert merged[0, EVAL_CLASSES.index("pole")] == pytest.approx(1.0)
    assert merged[2, EVAL_CLASSES.index("pedestrian")] == 1.0
    assert np.allclose(merged[keep].sum(axis=1), 1.0)


def test_merge_labels():
    t = ClassTable()
    lab = t.merge_labels([t.index("fence"), t.index("sky"), t.index("vehicle")])
    assert lab.tolist() == [EVAL_CLASSES.index("building"), -1, EVAL_CLASSES.index("vehicle")]


def test_table_from_dict_validation():
    assert ClassTable.from_dict(None) == ClassTable()
    with pytest.raises(ConfigError, match="not total"):
        ClassTable.from_dict({"names": ["a", "b"], "eval_names": ["a"], "merge": {"a": "a"}})
    with pytest.raises(ConfigError):
        ClassTable.from_dict({"names": ["a", "b"], "eval_names": ["a"], "merge": {"a": "a", "b": "zzz"}})
    t = ClassTable.from_dict({"names": ["a", "b", "c"], "eval_names": ["a", "c"]})
    assert t.merge == ("a", None, "c")
    assert ClassTable.from_dict(t.to_dict()) == t


def test_eval_palette_shape():
    pal = ClassTable().eval_palette()
    assert pal.shape == (7, 3) and pal.dtype == np.uint8
    assert set(EVAL_ABBREVIATIONS) == set(EVAL_CLASSES)
    assert len(CNN_CLASSES) == 12


# ------------------------------------------------------------ metrics

def test_perfect_prediction():
    truth = np.array([0, 1, 2, 2, 1, 0, 2])
    r = evaluate(truth, truth, ("a", "b", "c"))
    assert np.all(r.recall == 1) and np.all(r.precision == 1) and np.all(r.f1 == 1)
    assert np.allclose(r.normalized, 100 * np.eye(3))
    assert r.macro_f1 == 1.0


def test_all_one_class_closed_form():
    r = evaluate(np.zeros(10, int), np.array([0] * 5 + [1] * 5), ("A", "B"))
    assert r.recall[0] == 1.0 and r.precision[0] == 0.5
    assert r.f1[0] == pytest.approx(2 / 3)
    assert r.recall[1] == r.precision[1] == r.f1[1] == 0.0
    assert r.histogram.tolist() == [100.0, 0.0]


def test_probability_input_and_ignored_truth():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    r = evaluate(probs, [0, 1, -1], ("a", "b"))
    assert r.counts["evaluated"] == 2 and r.macro_f1 == 1.0


def test_mismatched_length():
    with pytest.raises(MismatchedLength):
        evaluate([0, 1], [0], ("a", "b"))
    with pytest.raises(MismatchedLength):
        confusion_counts(np.zeros(3, int), np.zeros(2, int), 2)


@given(st.integers(0, 2**31 - 1), st.integers(2, 8))
def test_report_invariants(seed, c):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, c, 200)
    truth = rng.integers(0, c, 200)
    r = evaluate(pred, truth, tuple(f"k{i}" for i in range(c)))
    col = r.normalized.sum(axis=0)
    present = r.confusion.sum(axis=0) > 0
    assert np.allclose(col[present], 100.0, atol=0.1)
    denom = r.precision + r.recall
    expect = np.where(denom > 0, 2 * r.precision * r.recall / np.where(denom > 0, denom, 1), 0.0)
    assert np.allclose(r.f1, expect)
    assert r.histogram.sum() == pytest.approx(100.0)


def test_zero_over_zero_is_zero():
    r = report_from_confusion(np.zeros((3, 3), int), ("a", "b", "c"))
    assert np.all(r.f1 == 0) and r.macro_f1 == 0.0


def test_confusion_orientation():
    cm = confusion_counts([1, 1, 0], [0, 1, 0], 2)
    assert cm.tolist() == [[1, 0], [1, 1]]  # rows predicted, columns true


def test_formatting_one_decimal():
    r = evaluate([0, 0, 1, 1, 1], [0, 1, 1, 1, 0], ("building", "pole"))
    txt = format_confusion(r, EVAL_ABBREVIATIONS)
    lines = txt.splitlines()
    assert lines[0].split() == ["B", "P"]
    assert lines[1].split() == ["B", "50.0", "33.3"]
    assert lines[2].split() == ["P", "50.0", "66.7"]
    assert "macro F1" in format_metrics(r)


def test_to_dict_roundable():
    r = evaluate([0, 1], [0, 1], ("a", "b"), {"extra": 3})
    d = r.to_dict()
    assert d["macro_f1"] == 1.0 and d["counts"]["extra"] == 3 and r.f1_of("b") == 1.0


# ------------------------------------------------------------ voxels

def test_majority_vote_ties_lowest_id():
    pts = np.array([[0.01, 0.01, 0.01], [0.02, 0.02, 0.02], [0.03, 0.01, 0.01], [0.15, 0, 0]])
    keys, lab = majority_vote_voxels(pts, [2, 1, 2, 1], 0.1, 3)
    assert keys.tolist() == [[0, 0, 0], [1, 0, 0]] and lab.tolist() == [2, 1]
    _, lab = majority_vote_voxels(pts[:2], [2, 1], 0.1, 3)
    assert lab.tolist() == [1]
    keys, lab = majority_vote_voxels(pts, [-1] * 4, 0.1, 3)
    assert len(keys) == 0


def test_evaluate_map_matches_by_key():
    pred_keys = np.array([[0, 0, 0], [1, 0, 0], [5, 5, 5]])
    pred_probs = np.array([[0.9, 0.1], [0.3, 0.7], [0.5, 0.5]])
    r = evaluate_map(pred_keys, pred_probs, [[1, 0, 0], [0, 0, 0], [9, 9, 9]], [1, 1, 0], ("a", "b"))
    assert r.counts["matched_voxels"] == 2
    assert r.confusion.tolist() == [[0, 1], [0, 1]]
    empty = evaluate_map(np.empty((0, 3)), np.empty((0, 2)), [[0, 0, 0]], [0], ("a", "b"))
    assert empty.counts["matched_voxels"] == 0 and empty.macro_f1 == 0.0
