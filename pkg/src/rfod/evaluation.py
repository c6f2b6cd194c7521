"""Detection metrics over row scores and labels, plus timing records.

Scores are "higher = more anomalous"; labels are 0 (normal) / 1 (anomaly).
All metrics are exact rank computations with documented tie handling, so
they can be checked against brute-force oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabelsError

LOG_LOSS_CLIP = 1e-7


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be 1-D and equal")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    return scores, labels


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic.

    Equals P(score_anomaly > score_normal) + 0.5 * P(equal), computed
    exactly with midranks for ties.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC-ROC needs both classes in labels")
    order = np.argsort(scores, kind="stable")
    _, inverse, counts = np.unique(scores[order], return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    midranks_by_group = ends - (counts - 1) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = midranks_by_group[inverse]
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_pr(scores, labels) -> float:
    """Average precision with worst-case tie ordering.

    Rows are ranked by descending score; among equal scores, negatives come
    first (positives ranked last), which makes the value conservative and
    deterministic.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DegenerateLabelsError("AUC-PR needs at least one positive label")
    order = np.lexsort((labels, -scores))
    y = labels[order]
    cum_tp = np.cumsum(y)
    pos_ranks = np.flatnonzero(y == 1) + 1
    return float(np.mean(cum_tp[y == 1] / pos_ranks))


def threshold_metrics(scores, labels, contamination: float) -> tuple[float, float, float]:
    """F1, accuracy, and the threshold implied by an assumed anomaly share.

    Flags exactly ceil(contamination * m) top-scored rows; ties at the
    threshold are broken by ascending row index.  Returns (f1, accuracy,
    threshold) where predictions are score >= threshold after tie-breaking.
    """
    scores, labels = _check_scores_labels(scores, labels)
    m = scores.size
    if not 0.0 < contamination < 1.0:
        raise ValueError(f"contamination must be in (0, 1), got {contamination}")
    k = int(math.ceil(contamination * m))
    if k < 1 or k > m:
        raise ValueError(f"contamination {contamination} flags {k} of {m} rows")
    order = np.argsort(-scores, kind="stable")
    flagged = order[:k]
    threshold = float(scores[order[k - 1]])
    preds = np.zeros(m, dtype=np.int64)
    preds[flagged] = 1
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    if 2 * tp + fp + fn == 0:
        f1 = 0.0  # no positives anywhere: define F1 = 0
    else:
        f1 = 2 * tp / (2 * tp + fp + fn)
    accuracy = float(np.mean(preds == labels))
    return f1, accuracy, threshold


def log_loss(scores, labels) -> float:
    """Cross-entropy of min-max normalized scores against the labels.

    Raw anomaly scores are mapped to probabilities by min-max scaling over
    the evaluated vector, then clipped away from 0 and 1.  A constant score
    vector maps every row to p = 0.5 (loss = log 2).
    """
    scores, labels = _check_scores_labels(scores, labels)
    if len(np.unique(labels)) < 2:
        raise DegenerateLabelsError("log-loss needs both classes in labels")
    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        p = np.full(scores.size, 0.5)
    else:
        p = np.clip((scores - lo) / (hi - lo), LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP)
    y = labels.astype(np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass(frozen=True)
class StageTimings:
    """Wall-clock seconds per pipeline stage.

    fit_per_feature is the mean time to train one feature's forest (TPF);
    score_per_sample is scoring time divided by the test size (TPS).
    """

    fit_total: float = 0.0
    fit_per_feature: float = 0.0
    prune: float = 0.0
    score_total: float = 0.0
    score_per_sample: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {
            "fit_total": self.fit_total,
            "fit_per_feature": self.fit_per_feature,
            "prune": self.prune,
            "score_total": self.score_total,
            "score_per_sample": self.score_per_sample,
        }


@dataclass(frozen=True)
class EvalReport:
    auc_roc: float
    auc_pr: float
    f1: float
    accuracy: float
    log_loss: float
    threshold: float
    contamination: float
    timings: StageTimings

    def metrics_dict(self) -> dict[str, float]:
        """The deterministic part of the report (no wall-clock values)."""
        return {
            "auc_roc": self.auc_roc,
            "auc_pr": self.auc_pr,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "log_loss": self.log_loss,
            "threshold": self.threshold,
            "contamination": self.contamination,
        }

    def to_dict(self) -> dict[str, object]:
        out: dict[str, object] = dict(self.metrics_dict())
        out["timings"] = self.timings.to_dict()
        return out

    def to_csv_row(self) -> dict[str, float]:
        row = dict(self.metrics_dict())
        row.update(self.timings.to_dict())
        return row


def build_report(
    scores, labels, contamination: float, timings: StageTimings | None = None
) -> EvalReport:
    """Assemble the full metric report for one scored test set."""
    f1, accuracy, threshold = threshold_metrics(scores, labels, contamination)
    return EvalReport(
        auc_roc=auc_roc(scores, labels),
        auc_pr=auc_pr(scores, labels),
        f1=f1,
        accuracy=accuracy,
        log_loss=log_loss(scores, labels),
        threshold=threshold,
        contamination=contamination,
        timings=timings or StageTimings(),
    )
