"""Masked macro AUROC / F1, forgetting, and routing accuracy.

AUROC is the exact pairwise statistic P(score_pos > score_neg) + 0.5 P(tie),
computed with integer tie-group counting so it matches an all-pairs brute
force bit for bit. Uncertain labels are excluded from evaluation (counted).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LabelCode


class MetricError(ValueError):
    pass


@dataclass
class MacroMetric:
    value: float
    per_class: list[float | None]
    scored_classes: int
    skipped_classes: int
    excluded_uncertain: int


def _binary_auroc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Exact tie-aware AUROC for one class; assumes both label values present."""
    uniq, inv = np.unique(scores, return_inverse=True)
    pos_per = np.bincount(inv, weights=positive.astype(np.float64), minlength=uniq.size)
    tot_per = np.bincount(inv, minlength=uniq.size).astype(np.float64)
    neg_per = tot_per - pos_per
    neg_below = np.concatenate([[0.0], np.cumsum(neg_per)[:-1]])
    numerator = float(np.sum(pos_per * neg_below + 0.5 * pos_per * neg_per))
    n_pos = float(positive.sum())
    n_neg = float(positive.size - positive.sum())
    return numerator / (n_pos * n_neg)


def auroc_masked(scores: np.ndarray, labels: np.ndarray) -> MacroMetric:
    """Macro AUROC over classes, masking uncertain/missing labels per class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError(f"scores {scores.shape} vs labels {labels.shape}")
    per_class: list[float | None] = []
    excluded = int(np.sum(labels == int(LabelCode.UNCERTAIN)))
    skipped = 0
    values = []
    for c in range(labels.shape[1]):
        valid = (labels[:, c] == int(LabelCode.NEGATIVE)) | (
            labels[:, c] == int(LabelCode.POSITIVE)
        )
        col = labels[valid, c]
        pos = col == int(LabelCode.POSITIVE)
        if pos.sum() == 0 or pos.sum() == pos.size:
            per_class.append(None)
            skipped += 1
            continue
        auc = _binary_auroc(scores[valid, c], pos)
        per_class.append(auc)
        values.append(auc)
    if not values:
        raise MetricError("no class has both a positive and a negative label")
    return MacroMetric(
        value=float(np.mean(values)),
        per_class=per_class,
        scored_classes=len(values),
        skipped_classes=skipped,
        excluded_uncertain=excluded,
    )


def macro_f1(
    scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5
) -> MacroMetric:
    """Macro F1 at a probability threshold over valid {0,1} labels.

    Per class: F1 = 1 when there are neither true nor predicted positives,
    0 when exactly one of the two sets is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError(f"scores {scores.shape} vs labels {labels.shape}")
    per_class: list[float | None] = []
    excluded = int(np.sum(labels == int(LabelCode.UNCERTAIN)))
    skipped = 0
    values = []
    for c in range(labels.shape[1]):
        valid = (labels[:, c] == int(LabelCode.NEGATIVE)) | (
            labels[:, c] == int(LabelCode.POSITIVE)
        )
        if not valid.any():
            per_class.append(None)
            skipped += 1
            continue
        truth = labels[valid, c] == int(LabelCode.POSITIVE)
        pred = scores[valid, c] >= threshold
        tp = int(np.sum(truth & pred))
        fp = int(np.sum(~truth & pred))
        fn = int(np.sum(truth & ~pred))
        if tp == 0 and fp == 0 and fn == 0:
            f1 = 1.0
        elif tp == 0:
            f1 = 0.0
        else:
            f1 = 2.0 * tp / (2.0 * tp + fp + fn)
        per_class.append(f1)
        values.append(f1)
    if not values:
        raise MetricError("no class has a valid label")
    return MacroMetric(
        value=float(np.mean(values)),
        per_class=per_class,
        scored_classes=len(values),
        skipped_classes=skipped,
        excluded_uncertain=excluded,
    )


def forgetting(auc_after_own: float, auc_after_later: float) -> float:
    """AUROC drop on a task between its own phase and a later phase;
    negative values mean backward transfer."""
    return auc_after_own - auc_after_later


@dataclass
class RoutingAccuracy:
    confusion: np.ndarray  # (K, K) int64, rows = true task, cols = routed task
    per_task: list[float]
    overall: float
    totals: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "per_task": self.per_task,
            "overall": self.overall,
            "confusion": self.confusion.tolist(),
            "totals": self.totals,
        }


def routing_accuracy(
    routed: np.ndarray, true_task_ids: np.ndarray, num_tasks: int | None = None
) -> RoutingAccuracy:
    """Per-task rates (diagonal / row sum) and the size-weighted overall rate
    (trace / total), which is not the mean of per-task rates."""
    routed = np.asarray(routed, dtype=np.int64)
    true_ids = np.asarray(true_task_ids, dtype=np.int64)
    if routed.shape != true_ids.shape:
        raise MetricError(
            f"{routed.size} decisions for {true_ids.size} samples"
        )
    k = num_tasks if num_tasks is not None else int(max(routed.max(), true_ids.max())) + 1
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (true_ids, routed), 1)
    totals = confusion.sum(axis=1)
    per_task = [
        float(confusion[i, i] / totals[i]) if totals[i] else float("nan")
        for i in range(k)
    ]
    overall = float(np.trace(confusion) / confusion.sum())
    return RoutingAccuracy(
        confusion=confusion,
        per_task=per_task,
        overall=overall,
        totals=[int(t) for t in totals],
    )


def routing_accuracy_from_confusion(confusion: np.ndarray) -> RoutingAccuracy:
    """Same accounting, starting from precomputed confusion counts."""
    confusion = np.asarray(confusion, dtype=np.int64)
    totals = confusion.sum(axis=1)
    per_task = [
        float(confusion[i, i] / totals[i]) if totals[i] else float("nan")
        for i in range(confusion.shape[0])
    ]
    overall = float(np.trace(confusion) / confusion.sum())
    return RoutingAccuracy(
        confusion=confusion,
        per_task=per_task,
        overall=overall,
        totals=[int(t) for t in totals],
    )
