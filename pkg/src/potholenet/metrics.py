"""Point-wise and event-wise evaluation.

Events are ``(start, end, class)`` half-open intervals. A prediction matches a
ground-truth event when the classes agree and their temporal IoU exceeds the
threshold; matching is one-to-one and maximizes the number of matched pairs,
breaking ties by total IoU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .signal import EVENT_CLASSES, N_CLASSES

IOU_THRESHOLDS = (0.1, 0.3, 0.5, 0.7)

Interval = tuple[int, int, int]


def interval_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def _as_interval(ev) -> Interval:
    if hasattr(ev, "cls"):
        return int(ev.start), int(ev.end), int(ev.cls)
    s, e, c = ev
    return int(s), int(e), int(c)


@dataclass(frozen=True)
class MatchResult:
    matches: list[tuple[int, int, float]]  # (pred index, gt index, iou)
    misses: list[int]
    false_alarms: list[int]


def match_events(pred: Sequence, gt: Sequence, iou_threshold: float, *, class_aware: bool = True) -> MatchResult:
    p = [_as_interval(e) for e in pred]
    g = [_as_interval(e) for e in gt]
    if not p or not g:
        return MatchResult([], list(range(len(g))), list(range(len(p))))
    iou = np.array([[interval_iou(a, b) for b in g] for a in p])
    same = np.array([[a[2] == b[2] for b in g] for a in p]) if class_aware else np.ones_like(iou, bool)
    ok = (iou > iou_threshold) & same
    # cardinality dominates: any matching with one more pair outweighs all IoU tie-break terms
    big = min(len(p), len(g)) + 1.0
    weight = np.where(ok, big + iou, 0.0)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    matches = sorted((int(r), int(c), float(iou[r, c])) for r, c in zip(rows, cols) if ok[r, c])
    used_p = {m[0] for m in matches}
    used_g = {m[1] for m in matches}
    return MatchResult(
        matches,
        [j for j in range(len(g)) if j not in used_g],
        [i for i in range(len(p)) if i not in used_p],
    )


def prf(n_matched: int, n_pred: int, n_gt: int) -> tuple[float, float, float]:
    """Precision, recall and F1 with zero-denominator cases mapped to 0."""
    precision = n_matched / n_pred if n_pred else 0.0
    recall = n_matched / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


@dataclass
class EventScores:
    threshold: float
    n_matched: int
    n_pred: int
    n_gt: int
    precision: float
    recall: float
    f1: float
    macro_f1: float
    mean_iou: float
    per_class: dict[int, dict] = field(default_factory=dict)
    confusion: list[list[int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold, "n_matched": self.n_matched, "n_pred": self.n_pred,
            "n_gt": self.n_gt, "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "macro_f1": self.macro_f1, "mean_iou": self.mean_iou,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "confusion": self.confusion,
        }


def event_scores(
    pred_per_seq: Sequence[Sequence], gt_per_seq: Sequence[Sequence], threshold: float,
    n_classes: int = N_CLASSES,
) -> EventScores:
    """Aggregate event matching over sequences (events never match across sequences).

    The event confusion matrix uses class-agnostic matching; row/column 0
    (Normal) collect false alarms and misses respectively.
    """
    counts = {c: [0, 0, 0] for c in range(1, n_classes)}  # matched, pred, gt
    ious: list[float] = []
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    for pred, gt in zip(pred_per_seq, gt_per_seq, strict=True):
        p = [_as_interval(e) for e in pred]
        g = [_as_interval(e) for e in gt]
        res = match_events(p, g, threshold)
        for i, j, v in res.matches:
            counts[p[i][2]][0] += 1
            ious.append(v)
        for a in p:
            counts[a[2]][1] += 1
        for b in g:
            counts[b[2]][2] += 1
        loose = match_events(p, g, threshold, class_aware=False)
        for i, j, _ in loose.matches:
            conf[g[j][2], p[i][2]] += 1
        for j in loose.misses:
            conf[g[j][2], 0] += 1
        for i in loose.false_alarms:
            conf[0, p[i][2]] += 1
    per_class = {}
    f1s = []
    for c, (m, n_p, n_g) in counts.items():
        pr, rc, f1 = prf(m, n_p, n_g)
        per_class[c] = {"n_matched": m, "n_pred": n_p, "n_gt": n_g,
                        "precision": pr, "recall": rc, "f1": f1}
        if c in EVENT_CLASSES and (n_p or n_g):
            f1s.append(f1)
    tm = sum(v[0] for v in counts.values())
    tp = sum(v[1] for v in counts.values())
    tg = sum(v[2] for v in counts.values())
    pr, rc, f1 = prf(tm, tp, tg)
    return EventScores(
        threshold=threshold, n_matched=tm, n_pred=tp, n_gt=tg, precision=pr, recall=rc, f1=f1,
        macro_f1=float(np.mean(f1s)) if f1s else 0.0,
        mean_iou=float(np.mean(ious)) if ious else 0.0,
        per_class=per_class, confusion=conf.tolist(),
    )


@dataclass
class PointScores:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_f1: float
    weighted_f1: float
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def point_scores(y_pred: np.ndarray, y_true: np.ndarray, n_classes: int = N_CLASSES) -> PointScores:
    y_pred = np.asarray(y_pred).ravel().astype(np.int64)
    y_true = np.asarray(y_true).ravel().astype(np.int64)
    if y_pred.shape != y_true.shape:
        raise ValueError(f"length mismatch {y_pred.shape} vs {y_true.shape}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros(n_classes), where=pred_tot > 0)
    recall = np.divide(tp, support, out=np.zeros(n_classes), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    total = support.sum()
    return PointScores(
        accuracy=float(tp.sum() / total) if total else 0.0,
        precision=precision.tolist(), recall=recall.tolist(), f1=f1.tolist(),
        support=support.tolist(),
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * support).sum() / total) if total else 0.0,
        confusion=cm.tolist(),
    )


@dataclass
class MetricsBundle:
    point: PointScores
    events: dict[float, EventScores]

    def to_dict(self) -> dict:
        return {
            "point": self.point.to_dict(),
            "events": {f"{k:g}": v.to_dict() for k, v in sorted(self.events.items())},
        }


def compute_metrics(
    y_pred: np.ndarray,
    y_true: np.ndarray,
    pred_events: Sequence[Sequence],
    gt_events: Sequence[Sequence],
    thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> MetricsBundle:
    return MetricsBundle(
        point=point_scores(y_pred, y_true),
        events={float(t): event_scores(pred_events, gt_events, float(t)) for t in thresholds},
    )
