"""Nearest-prototype inference, accuracy reporting and hubness diagnostics."""
import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._io import atomic_write_text, dumps_json, fmt_float
from .errors import ArgumentError
from .losses import (DistanceFrame, PredictionHistogram, _argmin_cols, assign_triplets,
                     label_space_indices)

AGGREGATIONS = ("per-class-mean", "overall")


def predict(features, table, net, label_space="all"):
    """Class index of the nearest prototype for every row of ``features``."""
    cols = label_space_indices(table, label_space)
    if len(cols) == 0:
        raise ArgumentError("no candidate classes to predict from")
    frame = DistanceFrame(net, np.atleast_2d(features), table)
    return _argmin_cols(frame.D, cols)


def predict_zsl(feature, table, net):
    """Nearest unseen class."""
    if table.num_unseen < 1:
        raise ArgumentError("no unseen classes")
    return table.class_ids[predict(feature, table, net, "unseen")[0]]


def predict_gzsl(feature, table, net):
    """Nearest class among seen and unseen."""
    if table.num_classes < 1:
        raise ArgumentError("empty semantic table")
    return table.class_ids[predict(feature, table, net, "all")[0]]


def per_class_accuracy(predictions, ground_truth):
    """Map class -> percentage of its instances predicted correctly."""
    pred = list(predictions)
    truth = list(ground_truth)
    if len(pred) != len(truth):
        raise ArgumentError("predictions and ground truth differ in length")
    hits, totals = {}, {}
    for p, t in zip(pred, truth):
        totals[t] = totals.get(t, 0) + 1
        hits[t] = hits.get(t, 0) + (p == t)
    return {c: 100.0 * hits[c] / totals[c] for c in totals}


def top1_accuracy(predictions, ground_truth, aggregation="per-class-mean"):
    """Top-1 accuracy in percent.

    ``per-class-mean`` averages the class-wise accuracies of the classes that
    occur in ``ground_truth``; ``overall`` is correct / total.
    """
    pred, truth = list(predictions), list(ground_truth)
    if not truth:
        raise ArgumentError("no predictions to score")
    if len(pred) != len(truth):
        raise ArgumentError("predictions and ground truth differ in length")
    if aggregation == "overall":
        return 100.0 * sum(p == t for p, t in zip(pred, truth)) / len(truth)
    if aggregation == "per-class-mean":
        return float(np.mean(list(per_class_accuracy(pred, truth).values())))
    raise ArgumentError(f"aggregation must be one of {AGGREGATIONS}")


def harmonic_mean(acc_s, acc_u):
    """Harmonic mean of seen and unseen accuracy (0 if either is 0)."""
    for x in (acc_s, acc_u):
        if not 0.0 <= x <= 100.0:
            raise ArgumentError(f"accuracy {x!r} outside [0, 100]")
    if acc_s + acc_u == 0:
        return 0.0
    return 2.0 * acc_s * acc_u / (acc_s + acc_u)


def k_occurrence(D, k):
    """How often each column is among the ``k`` nearest columns of a row."""
    nearest = np.argsort(D, axis=1, kind="stable")[:, :k]
    return np.bincount(nearest.ravel(), minlength=D.shape[1])


def skewness(counts):
    """Third standardised moment of a count vector; 0 when it is constant."""
    c = np.asarray(counts, dtype=np.float64)
    var = c.var()
    if var == 0:
        return 0.0
    return float(((c - c.mean()) ** 3).sum() / (len(c) * var ** 1.5))


def nk_skewness(test_features, table, net, k=1, label_space="all"):
    """Skewness of the k-occurrence distribution over the label-space prototypes."""
    cols = label_space_indices(table, label_space)
    if not 1 <= k <= len(cols):
        raise ArgumentError(f"k must lie in [1, {len(cols)}], got {k}")
    frame = DistanceFrame(net, np.atleast_2d(test_features), table)
    return skewness(k_occurrence(frame.D[:, cols], k))


@dataclass
class EvalReport:
    mode: str
    aggregation: str
    acc_seen: Optional[float]
    acc_unseen: float
    hm: Optional[float]
    overall_top1: float
    per_class: dict
    prediction_histogram: PredictionHistogram
    nk_skewness: float
    n_seen: int = 0
    n_unseen: int = 0

    def to_dict(self):
        return {
            "mode": self.mode,
            "aggregation": self.aggregation,
            "acc_seen": self.acc_seen,
            "acc_unseen": self.acc_unseen,
            "hm": self.hm,
            "overall_top1": self.overall_top1,
            "n_seen": self.n_seen,
            "n_unseen": self.n_unseen,
            "nk_skewness": self.nk_skewness,
            "per_class": self.per_class,
            "prediction_histogram": self.prediction_histogram.as_dict(),
        }

    def to_json(self):
        return dumps_json(self.to_dict())

    def summary(self):
        if self.mode == "gzsl":
            return (f"GZSL acc_s={self.acc_seen:.2f} acc_u={self.acc_unseen:.2f} "
                    f"hm={self.hm:.2f}")
        return f"ZSL acc_u={self.acc_unseen:.2f}"

    def per_class_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "top1"])
        for c, acc in self.per_class.items():
            w.writerow([c, fmt_float(acc)])
        return buf.getvalue()

    def histogram_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "count"])
        h = self.prediction_histogram
        for c, n in zip(h.class_ids, h.counts):
            w.writerow([c, int(n)])
        return buf.getvalue()

    def save(self, path, side_tables=True):
        atomic_write_text(path, self.to_json())
        if side_tables:
            stem = str(path)[:-5] if str(path).endswith(".json") else str(path)
            atomic_write_text(stem + ".per_class.csv", self.per_class_csv())
            atomic_write_text(stem + ".histogram.csv", self.histogram_csv())


def evaluate(data, table, net, mode="gzsl", aggregation="per-class-mean", k=1):
    """Score ``net`` on the test rows of ``data``.

    ZSL scores unseen-test rows against unseen classes only. GZSL scores
    seen-test and unseen-test rows against all classes.
    """
    if aggregation not in AGGREGATIONS:
        raise ArgumentError(f"aggregation must be one of {AGGREGATIONS}")
    if mode == "zsl":
        space, splits = "unseen", ("unseen-test",)
    elif mode == "gzsl":
        space, splits = "all", ("seen-test", "unseen-test")
    else:
        raise ArgumentError(f"mode must be 'zsl' or 'gzsl', got {mode!r}")
    test = data.select(*splits)
    if len(test) == 0:
        raise ArgumentError(f"no {'/'.join(splits)} rows to evaluate")
    if any(lab is None for lab in test.labels):
        raise ArgumentError("test rows must carry ground-truth labels for evaluation")
    test.check_against(table)
    pred_idx = predict(test.features, table, net, space)
    pred = [table.class_ids[i] for i in pred_idx]
    truth = list(test.labels)
    is_seen = np.array([s == "seen-test" for s in test.splits])

    def acc(mask):
        if not mask.any():
            return None
        return top1_accuracy([p for p, m in zip(pred, mask) if m],
                             [t for t, m in zip(truth, mask) if m], aggregation)

    acc_u = acc(~is_seen)
    if acc_u is None:
        acc_u = 0.0
    acc_s = hm = None
    if mode == "gzsl":
        acc_s = acc(is_seen)
        acc_s = 0.0 if acc_s is None else acc_s
        hm = harmonic_mean(acc_s, acc_u)
    cols = label_space_indices(table, space)
    hist = PredictionHistogram(tuple(table.class_ids[i] for i in cols),
                               np.array([int((pred_idx == c).sum()) for c in cols], dtype=np.int64))
    frame = DistanceFrame(net, test.features, table)
    skew = skewness(k_occurrence(frame.D[:, cols], min(k, len(cols))))
    pcs = per_class_accuracy(pred, truth)
    per_class = {c: pcs[c] for c in table.class_ids if c in pcs}
    return EvalReport(mode, aggregation, acc_s, acc_u, hm,
                      top1_accuracy(pred, truth, "overall"), per_class, hist, skew,
                      int(is_seen.sum()), int((~is_seen).sum()))


def diagnose(data, table, net, k_max=None, mode="gzsl"):
    """Hubness and pseudo-labeling statistics as a JSON-ready dict."""
    space = "unseen" if mode == "zsl" else "all"
    cols = label_space_indices(table, space)
    k_max = len(cols) if k_max is None else k_max
    if not 1 <= k_max <= len(cols):
        raise ArgumentError(f"k_max must lie in [1, {len(cols)}]")
    splits = ("unseen-test",) if mode == "zsl" else ("seen-test", "unseen-test")
    test = data.select(*splits)
    if len(test) == 0:
        raise ArgumentError("no test rows to diagnose")
    frame = DistanceFrame(net, test.features, table)
    D = frame.D[:, cols]
    pred = cols[np.argmin(D, axis=1)]
    out = {
        "mode": mode,
        "n_instances": len(test),
        "nk_skewness": {str(k): skewness(k_occurrence(D, k)) for k in range(1, k_max + 1)},
        "prediction_histogram": {table.class_ids[c]: int((pred == c).sum()) for c in cols},
    }
    if table.num_seen and table.num_unseen:
        tb = assign_triplets(test.features, table, net, "gzsl")
        by_split = {}
        for split in splits:
            mask = np.array([s == split for s in test.splits])
            if mask.any():
                by_split[split] = float(tb.discarded[mask].mean())
        out["discarded_fraction"] = {"all": tb.discarded_fraction, **by_split}
    return out
