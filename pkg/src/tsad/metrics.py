"""Evaluation metrics: point-wise F1, point-adjusted F1, composite F1,
range-based precision/recall at four functional levels, AU-ROC, AU-PRC.

Range-based scoring treats each maximal run of 1s as a half-open segment.
The four AD levels are cumulative: existence (AD1), flat range coverage
(AD2), coverage discounted by how early the first hit lands (AD3), and
additionally discounted by prediction fragmentation (AD4) — so
AD1 >= AD2 >= AD3 >= AD4 holds on every input by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "SegmentSet",
    "RangeMetricParams",
    "AD_LEVELS",
    "to_segments",
    "f1_point",
    "point_adjust",
    "fpa1",
    "fc1",
    "range_pr",
    "auc_roc",
    "auc_prc",
]


@dataclass(frozen=True)
class SegmentSet:
    """Disjoint, sorted, maximal half-open [start, end) anomaly ranges."""

    ranges: tuple

    def __iter__(self):
        return iter(self.ranges)

    def __len__(self):
        return len(self.ranges)


def to_segments(binary) -> SegmentSet:
    """Maximal runs of 1s in a {0,1} vector, as half-open ranges."""
    arr = np.asarray(binary)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("segment input must be binary")
    padded = np.concatenate([[0], arr, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return SegmentSet(ranges=tuple(zip(starts.tolist(), ends.tolist())))


def _counts(pred, labels):
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.shape != labels.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs labels {labels.shape}")
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    return tp, fp, fn


def f1_point(pred, labels):
    """Point-wise (precision, recall, F1); F1 = 0 when both rates vanish."""
    tp, fp, fn = _counts(pred, labels)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def point_adjust(pred, labels) -> np.ndarray:
    """Fill every true segment that contains at least one predicted
    positive; predictions outside true segments are untouched."""
    pred = np.asarray(pred).copy()
    labels = np.asarray(labels)
    if pred.shape != labels.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs labels {labels.shape}")
    for start, end in to_segments(labels):
        if pred[start:end].any():
            pred[start:end] = 1
    return pred


def fpa1(pred, labels):
    """Point-adjusted (precision, recall, F1)."""
    return f1_point(point_adjust(pred, labels), labels)


def fc1(pred, labels):
    """Composite score: point precision vs segment recall, harmonic mean."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    tp, fp, _ = _counts(pred, labels)
    p_t = tp / (tp + fp) if tp + fp else 0.0
    segments = to_segments(labels)
    detected = sum(1 for s, e in segments if pred[s:e].any())
    r_s = detected / len(segments) if len(segments) else 0.0
    value = 2 * p_t * r_s / (p_t + r_s) if p_t + r_s else 0.0
    return p_t, r_s, value


# ---------------------------------------------------------------------
# range-based precision/recall
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class RangeMetricParams:
    """Recall-side knobs: alpha weights existence vs overlap; delta is the
    positional bias (flat or front); gamma the cardinality discount (one
    or inverse). Precision always uses alpha=0, flat, one."""

    alpha: float
    delta: str = "flat"
    gamma: str = "one"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.delta not in ("flat", "front"):
            raise ValueError(f"delta must be flat or front, got {self.delta!r}")
        if self.gamma not in ("one", "inverse"):
            raise ValueError(f"gamma must be one or inverse, got {self.gamma!r}")


AD_LEVELS = {
    "AD1": RangeMetricParams(alpha=1.0, delta="flat", gamma="one"),
    "AD2": RangeMetricParams(alpha=0.0, delta="flat", gamma="one"),
    "AD3": RangeMetricParams(alpha=0.0, delta="front", gamma="one"),
    "AD4": RangeMetricParams(alpha=0.0, delta="front", gamma="inverse"),
}


def _range_recall_one(true_range, pred_segments, params: RangeMetricParams) -> float:
    start, end = true_range
    length = end - start
    covered = np.zeros(length, dtype=bool)
    overlapping = 0
    for ps, pe in pred_segments:
        lo, hi = max(start, ps), min(end, pe)
        if lo < hi:
            overlapping += 1
            covered[lo - start : hi - start] = True
    existence = 1.0 if overlapping else 0.0
    omega = covered.mean() if length else 0.0
    if params.delta == "front" and covered.any():
        first = int(np.argmax(covered))
        omega *= (length - first) / length  # linear earliness discount
    gamma_factor = 1.0 if params.gamma == "one" or overlapping == 0 else 1.0 / overlapping
    return params.alpha * existence + (1.0 - params.alpha) * gamma_factor * omega


def _range_precision_one(pred_range, true_segments) -> float:
    start, end = pred_range
    length = end - start
    covered = np.zeros(length, dtype=bool)
    for ts, te in true_segments:
        lo, hi = max(start, ts), min(end, te)
        if lo < hi:
            covered[lo - start : hi - start] = True
    return covered.mean() if length else 0.0


def range_pr(pred_segments, true_segments, params: RangeMetricParams):
    """Range-based (precision, recall, F1) for one parameterization.

    Recall averages per-true-range scores; precision averages flat
    coverage of predicted ranges by the truth. An empty truth (or empty
    prediction) side is reported as 0 with a warning.
    """
    pred_segments = list(pred_segments)
    true_segments = list(true_segments)
    if not true_segments:
        warnings.warn("range_pr: no true ranges; recall reported as 0", stacklevel=2)
        recall = 0.0
    else:
        recall = float(
            np.mean([_range_recall_one(r, pred_segments, params) for r in true_segments])
        )
    if not pred_segments:
        warnings.warn("range_pr: no predicted ranges; precision reported as 0", stacklevel=2)
        precision = 0.0
    else:
        precision = float(
            np.mean([_range_precision_one(p, true_segments) for p in pred_segments])
        )
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------
# threshold-free curves
# ---------------------------------------------------------------------

def auc_roc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs both classes present")
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_prc(scores, labels) -> float:
    """Area under the precision-recall curve (average precision).

    Degenerate label sets return the prevalence (0 or 1) with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        warnings.warn("auc_prc: no positive labels; returning 0.0", stacklevel=2)
        return 0.0
    if n_pos == len(labels):
        warnings.warn("auc_prc: all labels positive; returning 1.0", stacklevel=2)
        return 1.0
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    tp = np.cumsum(sorted_labels == 1)
    predicted = np.arange(1, len(labels) + 1)
    # evaluate only at the last index of each tied-score group
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    cut = np.concatenate([boundary, [len(labels) - 1]])
    precision = tp[cut] / predicted[cut]
    recall = tp[cut] / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))
