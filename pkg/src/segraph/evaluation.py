"""Segment-level scoring: confusion matrix, precision/recall/F1 and reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

CLASS_NAMES = ("People", "Car", "Rider", "Unknown")


class ConfusionMatrix:
    """K x K counts, rows = ground truth, columns = prediction."""

    def __init__(self, K=len(CLASS_NAMES), counts=None):
        self.K = K
        self.counts = np.zeros((K, K), dtype=np.int64) if counts is None else np.array(counts, dtype=np.int64)
        if self.counts.shape != (K, K):
            raise ValueError("counts must be K x K")

    def accumulate(self, truth, pred):
        """Add one (truth, pred) pair or two equal-length arrays of them."""
        truth = np.atleast_1d(np.asarray(truth, dtype=np.int64))
        pred = np.atleast_1d(np.asarray(pred, dtype=np.int64))
        if truth.shape != pred.shape:
            raise ValueError("truth and prediction lengths differ")
        for a in (truth, pred):
            if a.size and (a.min() < 0 or a.max() >= self.K):
                raise ValueError(f"class id out of range [0, {self.K})")
        np.add.at(self.counts, (truth, pred), 1)
        return self

    def merge(self, other: "ConfusionMatrix"):
        return ConfusionMatrix(self.K, self.counts + other.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def metrics(self) -> "ClassMetrics":
        return metrics(self)

    def to_csv(self, names=CLASS_NAMES):
        names = _names(names, self.K)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred"] + names)
        for name, row in zip(names, self.counts):
            w.writerow([name] + row.tolist())
        return buf.getvalue()


def _names(names, K):
    names = list(names)
    return names[:K] + [str(i) for i in range(len(names), K)]


def _safe_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


@dataclass
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    present: np.ndarray  # classes with at least one ground-truth sample

    @property
    def macro_precision(self):
        return float(self.precision[self.present].mean()) if self.present.any() else 0.0

    @property
    def macro_recall(self):
        return float(self.recall[self.present].mean()) if self.present.any() else 0.0

    @property
    def macro_f1(self):
        return float(self.f1[self.present].mean()) if self.present.any() else 0.0


def f1_score(p, r):
    return _safe_div(2 * np.asarray(p) * np.asarray(r), np.asarray(p) + np.asarray(r))


def metrics(cm: ConfusionMatrix) -> ClassMetrics:
    """Per-class P/R/F1 (0 on empty denominators); macro over classes present in truth."""
    tp = np.diag(cm.counts)
    p = _safe_div(tp, cm.counts.sum(axis=0))
    r = _safe_div(tp, cm.counts.sum(axis=1))
    return ClassMetrics(p, r, f1_score(p, r), cm.counts.sum(axis=1) > 0)


def evaluate(model, frames, K=None) -> ConfusionMatrix:
    from .training import predict

    K = K or model.cfg.K
    cm = ConfusionMatrix(K)
    for f, pred in zip(frames, predict(model, frames)):
        cm.accumulate(f.labels, pred)
    return cm


def report_rows(results, names=CLASS_NAMES):
    """Rows ``[method, P_c, R_c ..., avg P, avg R, avg F1]`` for ``{method: ClassMetrics}``."""
    rows = []
    for method, m in results.items():
        row = [method]
        for c in range(len(m.precision)):
            row += [m.precision[c], m.recall[c]]
        rows.append(row + [m.macro_precision, m.macro_recall, m.macro_f1])
    return rows


def _header(K, names):
    head = ["method"]
    for n in _names(names, K):
        head += [f"{n} P", f"{n} R"]
    return head + ["avg P", "avg R", "avg F1"]


def format_report_csv(results, names=CLASS_NAMES):
    K = len(next(iter(results.values())).precision)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(K, names))
    for row in report_rows(results, names):
        w.writerow([row[0]] + [f"{v:.4f}" for v in row[1:]])
    return buf.getvalue()


def format_report_text(results, names=CLASS_NAMES):
    """Aligned table: one row per method, per-class P/R then averages."""
    K = len(next(iter(results.values())).precision)
    head = _header(K, names)
    body = [[row[0]] + [f"{v:.3f}" for v in row[1:]] for row in report_rows(results, names)]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(head)] + [fmt(r) for r in body]) + "\n"


def confusion_heatmap(cm: ConfusionMatrix, cell=32):
    """RGB image (K*cell square): cell shade = row-normalized share, darker = higher."""
    share = _safe_div(cm.counts, cm.counts.sum(axis=1, keepdims=True))
    shade = (255 * (1.0 - share)).round().astype(np.uint8)
    img = np.repeat(np.repeat(shade, cell, axis=0), cell, axis=1)
    return np.repeat(img[..., None], 3, axis=2)
