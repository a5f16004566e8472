"""Recall / precision / F1, normalised confusion matrices and class histograms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MismatchedLength


@dataclass(eq=False)
class EvalReport:
    class_names: tuple
    confusion: np.ndarray  # counts, [predicted, true]
    recall: np.ndarray
    precision: np.ndarray
    f1: np.ndarray
    normalized: np.ndarray  # percent, each column (true label) sums to 100
    histogram: np.ndarray  # percent of predictions per class
    counts: dict = field(default_factory=dict)

    @property
    def macro_f1(self) -> float:
        support = self.confusion.sum(axis=0) + self.confusion.sum(axis=1) > 0
        return float(self.f1[support].mean()) if np.any(support) else 0.0

    def f1_of(self, name: str) -> float:
        return float(self.f1[list(self.class_names).index(name)])

    def to_dict(self) -> dict:
        return {
            "classes": list(self.class_names),
            "recall": [round(float(x), 6) for x in self.recall],
            "precision": [round(float(x), 6) for x in self.precision],
            "f1": [round(float(x), 6) for x in self.f1],
            "macro_f1": round(self.macro_f1, 6),
            "counts": self.counts,
        }


def _safe_div(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def confusion_counts(pred, truth, classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise MismatchedLength(f"{pred.shape[0] if pred.ndim else 0} predictions vs {truth.shape[0] if truth.ndim else 0} labels")
    return np.bincount(pred * classes + truth, minlength=classes * classes).reshape(classes, classes)


def report_from_confusion(cm: np.ndarray, class_names, counts=None) -> EvalReport:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(float)
    recall = _safe_div(tp, cm.sum(axis=0))
    precision = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    normalized = 100.0 * _safe_div(cm, cm.sum(axis=0, keepdims=True))
    total = cm.sum()
    histogram = 100.0 * _safe_div(cm.sum(axis=1), total)
    info = {"evaluated": int(total)}
    if counts:
        info.update(counts)
    return EvalReport(tuple(class_names), cm, recall, precision, f1, normalized, histogram, info)


def evaluate(pred, truth, class_names, counts=None) -> EvalReport:
    """Compare predicted class ids (or (P, c) probabilities) with true ids.

    Entries with a negative true id are ignored.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    if len(pred) != len(truth):
        raise MismatchedLength(f"{len(pred)} predictions vs {len(truth)} labels")
    ok = (truth >= 0) & (pred >= 0)
    return report_from_confusion(confusion_counts(pred[ok], truth[ok], len(class_names)), class_names, counts)


def _row_codes(keys) -> np.ndarray:
    """One int64 per (N, 3) integer row, ordered like a lexicographic row sort."""
    lo = keys.min(axis=0)
    span = keys.max(axis=0) - lo + 1
    if np.prod(span.astype(float)) < 2.0**62:
        rel = keys - lo
        return (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
    return np.unique(keys, axis=0, return_inverse=True)[1].reshape(-1)


def majority_vote_voxels(points, labels, resolution: float, classes: int):
    """Ground-truth voxel labels by majority of contained points (ties: lowest id)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lab = np.asarray(labels, dtype=np.int64)
    ok = lab >= 0
    keys = np.floor(pts[ok] / resolution).astype(np.int64)
    if len(keys) == 0:
        return np.empty((0, 3), np.int64), np.empty(0, np.int64)
    _, first, inv = np.unique(_row_codes(keys), return_index=True, return_inverse=True)
    uniq = keys[first]
    inv = inv.reshape(-1)
    votes = np.bincount(inv * classes + lab[ok], minlength=len(uniq) * classes).reshape(len(uniq), classes)
    return uniq, np.argmax(votes, axis=1)


def _match_rows(a, b):
    """Index pairs (i, j) with a[i] == b[j], in order of j; rows of a are unique."""
    if len(a) == 0 or len(b) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    codes = _row_codes(np.concatenate([a, b]))
    ca, cb = codes[:len(a)], codes[len(a):]
    order = np.argsort(ca, kind="stable")
    pos = np.clip(np.searchsorted(ca[order], cb), 0, len(a) - 1)
    hit = ca[order][pos] == cb
    return order[pos[hit]], np.nonzero(hit)[0]


def evaluate_map(pred_keys, pred_probs, truth_keys, truth_labels, class_names, counts=None) -> EvalReport:
    """Match voxels by key and compare argmax class with the voxel ground truth."""
    pred_keys = np.asarray(pred_keys, dtype=np.int64).reshape(-1, 3)
    truth_keys = np.asarray(truth_keys, dtype=np.int64).reshape(-1, 3)
    pi, ti = _match_rows(pred_keys, truth_keys)
    pred = np.argmax(np.asarray(pred_probs)[pi], axis=1) if len(pi) else np.empty(0, np.int64)
    info = {"predicted_voxels": int(len(pred_keys)), "truth_voxels": int(len(truth_keys)), "matched_voxels": int(len(pi))}
    if counts:
        info.update(counts)
    return evaluate(pred, np.asarray(truth_labels)[ti], class_names, info)


def format_confusion(report: EvalReport, abbreviations=None) -> str:
    """Text table of the column-normalised confusion matrix, one decimal per cell."""
    names = [abbreviations.get(n, n) if abbreviations else n for n in report.class_names]
    width = max(5, max(len(n) for n in names) + 1)
    lines = [" " * width + "".join(f"{n:>{width}}" for n in names)]
    for i, n in enumerate(names):
        lines.append(f"{n:<{width}}" + "".join(f"{report.normalized[i, j]:>{width}.1f}" for j in range(len(names))))
    return "\n".join(lines)


def format_metrics(report: EvalReport) -> str:
    lines = [f"{'class':<18}{'recall':>8}{'precision':>11}{'F1':>8}"]
    for i, n in enumerate(report.class_names):
        lines.append(f"{n:<18}{report.recall[i]:>8.3f}{report.precision[i]:>11.3f}{report.f1[i]:>8.3f}")
    lines.append(f"{'macro F1':<18}{'':>19}{report.macro_f1:>8.3f}")
    return "\n".join(lines)
