"""Classification metrics and report files."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np


@dataclass
class MetricsReport:
    accuracy: float
    weighted_f1: float
    per_class_f1: np.ndarray  # (C,)
    confusion: np.ndarray     # (C, C); rows are true classes, columns predictions

    @property
    def n_classes(self) -> int:
        return len(self.per_class_f1)

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "weighted_f1": self.weighted_f1,
                "per_class_f1": self.per_class_f1.tolist(), "confusion": self.confusion.tolist()}


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label vectors differ in length: {y_true.size} vs {y_pred.size}")
    for name, y in (("true", y_true), ("predicted", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ValueError(f"{name} labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def f1_from_confusion(cm: np.ndarray) -> np.ndarray:
    """Per-class F1; a class with zero precision plus recall scores 0."""
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    # 2PR/(P+R) simplifies to 2tp / (predicted + actual)
    denom = predicted + actual
    return np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def report_from_confusion(cm: np.ndarray) -> MetricsReport:
    total = int(cm.sum())
    if total == 0:
        raise ValueError("cannot compute metrics on an empty set of predictions")
    # summed in exact rationals so the result is the correctly rounded weighted F1
    tp, denom, support = np.diag(cm), cm.sum(axis=0) + cm.sum(axis=1), cm.sum(axis=1)
    weighted = sum((Fraction(2 * int(s) * int(t), int(d)) for s, t, d in zip(support, tp, denom) if d),
                   Fraction(0))
    return MetricsReport(accuracy=int(np.trace(cm)) / total,
                         weighted_f1=float(weighted / total),
                         per_class_f1=f1_from_confusion(cm), confusion=cm)


def compute_metrics(y_true, y_pred, n_classes: int) -> MetricsReport:
    return report_from_confusion(confusion_matrix(y_true, y_pred, n_classes))


def emit_report(report: MetricsReport, out_dir, class_names: Optional[Sequence[str]] = None,
                extra: Optional[Dict[str, object]] = None) -> Dict[str, Path]:
    """Write ``summary.txt``, ``confusion.csv`` and ``per_class_f1.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(class_names) if class_names else [str(c) for c in range(report.n_classes)]
    if len(names) != report.n_classes:
        raise ValueError(f"expected {report.n_classes} class names, got {len(names)}")
    paths = {"summary": out / "summary.txt", "confusion": out / "confusion.csv",
             "per_class": out / "per_class_f1.csv"}

    with paths["confusion"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, report.confusion):
            w.writerow([name] + [int(v) for v in row])

    with paths["per_class"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "support", "f1"])
        for name, sup, f1 in zip(names, report.support, report.per_class_f1):
            w.writerow([name, int(sup), repr(float(f1))])

    width = max(len(n) for n in names)
    lines = [f"utterances:   {int(report.confusion.sum())}",
             f"accuracy:     {report.accuracy:.6f}",
             f"weighted F1:  {report.weighted_f1:.6f}",
             "",
             f"{'class'.ljust(width)}  support      f1"]
    lines += [f"{n.ljust(width)}  {int(s):7d}  {f:.4f}" for n, s, f in
              zip(names, report.support, report.per_class_f1)]
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    paths["summary"].write_text("\n".join(lines) + "\n")
    return paths


def read_confusion_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)
