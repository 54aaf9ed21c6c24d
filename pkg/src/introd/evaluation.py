"""Accuracy, harmonic mean, per-run metric reports and the w_id histogram."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InvalidInputError
from .introspection import SOFT, ScoreMode, match_scores, weights

MARKERS = (0.05, 0.4, 0.5, 0.6)


def accuracy(proba, gt_mask):
    """Fraction of rows whose argmax (ties to the lowest index) is a ground-truth answer."""
    proba = np.asarray(proba)
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if proba.shape[0] == 0:
        raise InvalidInputError("accuracy of an empty dataset is undefined")
    pred = np.argmax(proba, axis=1)
    return float(gt_mask[np.arange(len(pred)), pred].mean())


def harmonic_mean(id_acc, ood_acc):
    if id_acc + ood_acc == 0:
        return 0.0
    return 2.0 * id_acc * ood_acc / (id_acc + ood_acc)


def per_type_accuracy(proba, dataset):
    pred = np.argmax(proba, axis=1)
    hit = dataset.gt_mask[np.arange(len(pred)), pred]
    T = dataset.bias_config.n_types if dataset.bias_config.preset == "answer_prior" else 1
    out = []
    for t in range(T):
        sel = dataset.question_type == t
        out.append(float(hit[sel].mean()) if sel.any() else float("nan"))
    return out


@dataclass
class MetricsReport:
    id_accuracy: float
    ood_accuracy: float
    hm: float
    per_type_accuracy: dict = field(default_factory=dict)
    n_eval: dict = field(default_factory=dict)

    @classmethod
    def from_accuracies(cls, id_acc, ood_acc, **kw):
        return cls(id_acc, ood_acc, harmonic_mean(id_acc, ood_acc), **kw)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def row(self):
        return {"id_acc": self.id_accuracy, "ood_acc": self.ood_accuracy, "hm": self.hm}


def evaluate(predict_proba, id_test, ood_test):
    """Score a readout ``predict_proba(X, question_type)`` on both test splits."""
    p_id = predict_proba(id_test.X, id_test.question_type)
    p_ood = predict_proba(ood_test.X, ood_test.question_type)
    return MetricsReport.from_accuracies(
        accuracy(p_id, id_test.gt_mask),
        accuracy(p_ood, ood_test.gt_mask),
        per_type_accuracy={
            "id_test": per_type_accuracy(p_id, id_test),
            "ood_test": per_type_accuracy(p_ood, ood_test),
        },
        n_eval={"id_test": len(id_test), "ood_test": len(ood_test)},
    )


@dataclass
class WeightHistogram:
    bin_edges: list
    counts: list
    fraction_below: dict
    fraction_above: dict
    n: int

    def modal_bin(self):
        i = int(np.argmax(self.counts))
        return self.bin_edges[i], self.bin_edges[i + 1]

    def modal_bin_contains(self, x):
        lo, hi = self.modal_bin()
        return lo <= x <= hi

    def to_dict(self):
        return asdict(self)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            w.writerow([repr(lo), repr(hi), c])
        return buf.getvalue()


def histogram_of(w_id, bins=20):
    w_id = np.asarray(w_id, dtype=np.float64)
    if w_id.size == 0:
        raise InvalidInputError("cannot build a histogram of zero samples")
    edges = np.linspace(0.0, 1.0, bins + 1) if np.isscalar(bins) else np.asarray(bins, dtype=np.float64)
    counts, edges = np.histogram(w_id, bins=edges)
    return WeightHistogram(
        [float(e) for e in edges],
        [int(c) for c in counts],
        {str(m): float(np.mean(w_id < m)) for m in MARKERS},
        {str(m): float(np.mean(w_id > m)) for m in MARKERS},
        int(w_id.size),
    )


def soft_weights(teacher, dataset, mode=ScoreMode.XE):
    out = teacher.teacher_outputs(dataset.X, dataset.question_type)
    return weights(match_scores(out.p_id, out.p_ood, dataset.gt_dist, mode), SOFT).w_id


def weight_histogram(teacher, train, mode=ScoreMode.XE, bins=20):
    """Distribution of the soft ``w_id`` over a training set."""
    if len(train) == 0:
        raise InvalidInputError("empty dataset")
    return histogram_of(soft_weights(teacher, train, mode), bins)


def ensemble_eval(teacher, w_id_grid, id_test, ood_test):
    """Metrics of the fixed-weight mixture ``w * p_id + (1 - w) * p_ood`` per grid value."""
    outs = {name: teacher.teacher_outputs(ds.X, ds.question_type) for name, ds in (("id", id_test), ("ood", ood_test))}
    rows = []
    for w in w_id_grid:
        w = float(w)
        if not 0.0 <= w <= 1.0:
            raise InvalidInputError(f"ensemble weight {w} outside [0, 1]")
        mix = {k: w * o.p_id + (1.0 - w) * o.p_ood for k, o in outs.items()}
        report = MetricsReport.from_accuracies(
            accuracy(mix["id"], id_test.gt_mask),
            accuracy(mix["ood"], ood_test.gt_mask),
            n_eval={"id_test": len(id_test), "ood_test": len(ood_test)},
        )
        rows.append((w, report))
    return rows
