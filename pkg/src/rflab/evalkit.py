"""Confusion matrices, the three classification KPIs, reports and feature export."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError
from .trainer import embed


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ArgumentError(f"confusion matrix must be square, got shape {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ArgumentError("confusion counts must be nonnegative")

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + list(range(self.num_classes)))
        for i, row in enumerate(self.counts):
            w.writerow([i] + row.tolist())
        return buf.getvalue()


def confusion(preds, labels, num_classes):
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ArgumentError(f"{len(preds)} predictions vs {len(labels)} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        bad = arr[(arr < 0) | (arr >= num_classes)]
        if bad.size:
            raise ArgumentError(f"{name} {int(bad[0])} outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def _per_class(cm):
    c = cm.counts
    tp = np.diag(c)
    fn = c.sum(axis=1) - tp
    fp = c.sum(axis=0) - tp
    tn = cm.total - tp - fn - fp
    return tp, fn, fp, tn


def tpr(cm):
    """Micro-averaged true positive rate: sum TP / sum (TP + FN)."""
    if cm.total == 0:
        raise ArgumentError("empty confusion matrix")
    tp, fn, _, _ = _per_class(cm)
    return float(tp.sum() / (tp + fn).sum())


def fpr(cm):
    """Macro-averaged false positive rate over classes."""
    if cm.total == 0:
        raise ArgumentError("empty confusion matrix")
    _, _, fp, tn = _per_class(cm)
    neg = fp + tn
    bad = np.flatnonzero(neg == 0)
    if bad.size:
        raise ArgumentError(f"class {int(bad[0])} has no negative examples; FPR undefined")
    return float(np.mean(fp / neg))


def top1(cm):
    """Balanced top-1 accuracy: mean per-class recall."""
    rows = cm.counts.sum(axis=1)
    bad = np.flatnonzero(rows == 0)
    if bad.size:
        raise ArgumentError(f"class {int(bad[0])} has no true examples; recall undefined")
    return float(np.mean(np.diag(cm.counts) / rows))


def kpi_line(tpr_value, fpr_value, top1_value):
    return f"{tpr_value:.3f} / {fpr_value:.3f} / {top1_value:.3f}"


def report(cm, scenario, model, M, mode, extra=None):
    """KPI report dict for one evaluated scenario."""
    out = {
        "scenario": scenario.upper(), "model": model, "M": int(M), "mode": mode,
        "tpr": tpr(cm), "fpr": fpr(cm), "top1": top1(cm), "confusion": cm.counts.tolist(),
    }
    if extra:
        out.update(extra)
    return out


def write_report(path, rep, cm):
    """Write the JSON report and the confusion matrix CSV next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rep, indent=1, sort_keys=True))
    csv_path = path.with_suffix(".confusion.csv")
    csv_path.write_text(cm.to_csv())
    return path, csv_path


def export_features(net, ds, batch=64):
    """Eval-mode embedding rows and labels for every example in ``ds``."""
    return embed(net, ds.X, batch), np.asarray(ds.y)


def features_csv(features, labels, ids=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = (["id"] if ids is not None else []) + ["label"] + [f"f{i}" for i in range(features.shape[1])]
    w.writerow(head)
    for i, (row, lab) in enumerate(zip(features, labels)):
        w.writerow(([ids[i]] if ids is not None else []) + [int(lab)] + [repr(float(v)) for v in row])
    return buf.getvalue()
