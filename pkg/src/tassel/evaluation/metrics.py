"""Confusion matrices, accuracy, per-class F1 and Cohen's kappa."""

import csv
import io
from dataclasses import dataclass
from typing import List

import numpy as np

from ..errors import ContractError, LabelIndexError

CSV_COLUMNS = ("accuracy", "kappa", "f1_weighted", "f1_macro", "n")


def confusion(preds, labels, n_classes):
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise ContractError(f"{preds.size} predictions for {labels.size} labels")
    for name, v in (("label", labels), ("prediction", preds)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise LabelIndexError(f"{name} outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass
class MetricReport:
    accuracy: float
    kappa: float
    precision: List[float]
    recall: List[float]
    f1: List[float]
    support: List[int]
    f1_weighted: float
    f1_macro: float
    n: int

    def to_json(self):
        return {
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "f1_weighted": self.f1_weighted,
            "f1_macro": self.f1_macro,
            "n": self.n,
            "per_class": {
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "support": self.support,
            },
        }

    def csv_row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def metrics(cm):
    cm = np.asarray(cm, dtype=np.int64)
    n = int(cm.sum())
    if n == 0:
        raise ContractError("metrics of an empty confusion matrix")
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0).astype(np.float64)
    true_tot = cm.sum(axis=1).astype(np.float64)
    precision = _safe_div(tp, pred_tot)
    recall = _safe_div(tp, true_tot)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    p_o = tp.sum() / n
    p_e = float((pred_tot * true_tot).sum()) / (n * n)
    if p_e == 1.0:
        kappa = 1.0 if p_o == 1.0 else 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return MetricReport(
        accuracy=float(p_o),
        kappa=float(kappa),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=true_tot.astype(np.int64).tolist(),
        f1_weighted=float((f1 * true_tot).sum() / n),
        f1_macro=float(f1.mean()),
        n=n,
    )


def evaluate(preds, labels, n_classes):
    return metrics(confusion(preds, labels, n_classes))


def csv_text(rows, header=CSV_COLUMNS, prefix=()):
    """Render rows as CSV with ``prefix`` columns ahead of ``header``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(prefix) + list(header))
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
