"""Ranking metrics and test-set evaluation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .journey_data import Dataset, Normalizer, atomic_write_text


class MetricError(ValueError):
    """Metric undefined for the given labels (e.g. a single class)."""


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.size == 0 or s.size != y.size:
        raise ValueError(f"need equal, non-zero numbers of scores and labels ({s.size} vs {y.size})")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC, ties credited one half.

    Sorting once and walking tie groups gives
    ``sum over positives of (#negatives strictly below + 0.5 * #negatives tied)``.
    """
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs at least one positive and one negative label")
    uniq, inverse = np.unique(s, return_inverse=True)
    pos_per = np.bincount(inverse, weights=y, minlength=uniq.size)
    neg_per = np.bincount(inverse, weights=1 - y, minlength=uniq.size)
    neg_below = np.concatenate([[0.0], np.cumsum(neg_per)[:-1]])
    credit = float(np.sum(pos_per * (neg_below + 0.5 * neg_per)))
    return credit / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision over descending unique thresholds (ties share a threshold)."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("AUPRC needs at least one positive label")
    uniq, inverse = np.unique(-s, return_inverse=True)  # ascending in -s = descending in s
    tp = np.cumsum(np.bincount(inverse, weights=y, minlength=uniq.size))
    seen = np.cumsum(np.bincount(inverse, minlength=uniq.size))
    recall = tp / n_pos
    precision = tp / seen
    d_recall = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(d_recall * precision))


@dataclass
class Evaluation:
    auroc: float
    auprc: float
    scores: np.ndarray
    ids: list[str]
    labels: np.ndarray

    def metrics_json(self) -> str:
        return json.dumps({"auroc": self.auroc, "auprc": self.auprc, "n": int(self.labels.size),
                           "positives": int(self.labels.sum())})

    def scores_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "label", "score"])
        for i, y, s in zip(self.ids, self.labels, self.scores):
            w.writerow([i, int(y), format(float(s), ".17g")])
        return buf.getvalue()

    def write(self, scores_path, metrics_path=None) -> None:
        atomic_write_text(scores_path, self.scores_csv())
        if metrics_path is not None:
            atomic_write_text(metrics_path, self.metrics_json() + "\n")


def evaluate_scores(scores, ds: Dataset) -> Evaluation:
    labels = ds.labels
    return Evaluation(auroc(scores, labels), auprc(scores, labels), np.asarray(scores), ds.ids, labels)


def evaluate_model(p, ds: Dataset, norm: Normalizer | None = None) -> Evaluation:
    """Score every journey of ``ds`` (in order) with the positive-class probability.

    ``norm`` defaults to the normalizer stored with ``p`` at training time.
    """
    from .baselines import encode_for
    from .prediction import predict_proba

    if norm is not None and norm is not p.normalizer:
        p = p.copy()
        p.normalizer = norm
    if p.normalizer is None:
        raise ValueError("evaluation needs the normalizer fitted at training time")
    return evaluate_scores(predict_proba(p, encode_for(p, ds)), ds)
