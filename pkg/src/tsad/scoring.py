"""Anomaly scoring: rolling-Gaussian tail probabilities over
reconstruction errors, optional 2-D kernel smoothing of the score field,
and the three thresholding rules (best-F, top-k, tail-p).

Scores are ``-log`` survival probabilities of each error under a Gaussian
whose mean/variance are re-fit on the trailing window of errors; the
survival function is floored at 1e-15, capping scores at ~34.54.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d
from scipy.special import erfc

__all__ = [
    "SIGMA_FLOOR",
    "SCORE_CAP",
    "TAIL_EPSILONS",
    "RollingGaussian",
    "ScoreSeries",
    "rolling_stats",
    "gauss_d_score",
    "aggregate_scores",
    "gauss_d_k",
    "threshold_best_f",
    "threshold_top_k",
    "threshold_tail_p",
]

SIGMA_FLOOR = 1e-8
SF_FLOOR = 1e-15
SCORE_CAP = -math.log(SF_FLOOR)
TAIL_EPSILONS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)


@dataclass
class RollingGaussian:
    """Trailing-window Gaussian over per-sensor errors.

    Freshly initialized from the last training window, ``mu``/``sigma``
    equal that window's statistics exactly; each consumed test error then
    slides the window forward by one.
    """

    mu: np.ndarray        # [S]
    sigma: np.ndarray     # [S], floored
    l_w: int
    buffer: np.ndarray    # [l_w, S] trailing errors

    @classmethod
    def from_training_tail(cls, tail: np.ndarray) -> "RollingGaussian":
        tail = np.asarray(tail, dtype=np.float64)
        if tail.ndim != 2 or tail.shape[0] < 2:
            raise ValueError(f"need a [l_w >= 2, S] error window, got shape {tail.shape}")
        mu, sigma = _window_stats(tail)
        return cls(mu=mu, sigma=sigma, l_w=tail.shape[0], buffer=tail.copy())

    def consume(self, er_row: np.ndarray):
        """Slide the window over one new error row; returns (mu, sigma)
        of the window that now ends at (and includes) this row."""
        self.buffer = np.vstack([self.buffer[1:], np.asarray(er_row, dtype=np.float64)])
        self.mu, self.sigma = _window_stats(self.buffer)
        return self.mu, self.sigma


def _window_stats(window: np.ndarray):
    mu = window.mean(axis=0)
    sigma = np.maximum(window.std(axis=0, ddof=1), SIGMA_FLOOR)
    return mu, sigma


def rolling_stats(er: np.ndarray, l_w: int, init_tail: np.ndarray):
    """Per-timestamp trailing mean/std of the error stream.

    The trailing window of length `l_w` ends at and includes timestamp t;
    positions before the stream start are supplied by `init_tail`, the
    reconstruction errors of the last training window. Variance uses the
    1/(l_w - 1) normalization; sigma is floored at SIGMA_FLOOR.
    """
    er = np.asarray(er, dtype=np.float64)
    init_tail = np.asarray(init_tail, dtype=np.float64)
    if l_w < 2:
        raise ValueError(f"rolling window must be >= 2, got {l_w}")
    if init_tail.shape != (l_w, er.shape[1]):
        raise ValueError(
            f"init tail shape {init_tail.shape} != expected {(l_w, er.shape[1])}"
        )
    full = np.vstack([init_tail, er])
    sw = np.lib.stride_tricks.sliding_window_view(full, l_w, axis=0)  # [T+1, S, l_w]
    windows = sw[1:]
    mu = windows.mean(axis=-1)
    sigma = np.maximum(windows.std(axis=-1, ddof=1), SIGMA_FLOOR)
    return mu, sigma


def gauss_d_score(er: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Sensor-wise score -log(1 - Phi((Er - mu) / sigma)), capped.

    Phi is the standard normal cdf; the survival function is computed via
    erfc and floored at 1e-15, so scores saturate at -log(1e-15).
    """
    sigma = np.maximum(np.asarray(sigma, dtype=np.float64), SIGMA_FLOOR)
    z = (np.asarray(er, dtype=np.float64) - mu) / sigma
    sf = 0.5 * erfc(z / math.sqrt(2.0))
    return -np.log(np.maximum(sf, SF_FLOOR))


def aggregate_scores(sensor_scores: np.ndarray) -> np.ndarray:
    """Total anomaly score per timestamp: sum over sensors."""
    return np.asarray(sensor_scores).sum(axis=1)


def gauss_d_k(sensor_scores: np.ndarray, sigma_k: float) -> np.ndarray:
    """Smooth the [T, S] score field with a 2-D Gaussian kernel.

    The kernel is truncated at radius ceil(3 * sigma_k) per axis,
    normalized to sum 1, and applied with reflective (edge-repeating)
    padding, so a constant field passes through unchanged.
    """
    if sigma_k <= 0:
        raise ValueError(f"sigma_k must be positive, got {sigma_k}")
    a = np.asarray(sensor_scores, dtype=np.float64)
    r = math.ceil(3.0 * sigma_k)
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    g1 = np.exp(-0.5 * (offsets / sigma_k) ** 2)
    kernel = np.outer(g1, g1)
    kernel /= kernel.sum()
    padded = np.pad(a, r, mode="symmetric")
    return convolve2d(padded, kernel, mode="valid")


# ---------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------

def threshold_best_f(aggregate: np.ndarray, labels: np.ndarray, metric="fc1"):
    """Sweep candidate thresholds and keep the metric maximizer.

    Candidates are the unique aggregate values (quantile-subsampled to at
    most 10,000) plus one value below the minimum so the all-positive
    labeling is reachable. `metric` is "f1", "fpa1", "fc1", or a callable
    (pred, labels) -> float. Predictions are `aggregate > threshold`.
    """
    from tsad import metrics as M

    named = {
        "f1": lambda p, y: M.f1_point(p, y)[2],
        "fpa1": lambda p, y: M.f1_point(M.point_adjust(p, y), y)[2],
        "fc1": lambda p, y: M.fc1(p, y)[2],
    }
    score_fn = named[metric] if isinstance(metric, str) else metric
    aggregate = np.asarray(aggregate, dtype=np.float64)
    labels = np.asarray(labels)

    if labels.max(initial=0) == 0:
        # no positives: every F is 0; predict nothing
        threshold = float(aggregate.max()) + 1.0
        return threshold, (aggregate > threshold).astype(np.int64)
    unique = np.unique(aggregate)
    if unique.size == 1:
        threshold = float(unique[0])
        return threshold, (aggregate > threshold).astype(np.int64)
    if unique.size > 10_000:
        idx = np.linspace(0, unique.size - 1, 10_000).round().astype(int)
        unique = unique[np.unique(idx)]
    candidates = np.concatenate([[unique[0] - 1.0], unique])

    best_threshold, best_value, best_pred = None, -1.0, None
    for cand in candidates:
        pred = (aggregate > cand).astype(np.int64)
        value = score_fn(pred, labels)
        if value > best_value:
            best_threshold, best_value, best_pred = float(cand), value, pred
    return best_threshold, best_pred


def threshold_top_k(aggregate: np.ndarray, k: int) -> np.ndarray:
    """Flag exactly the k highest-scoring timestamps (earlier wins ties)."""
    aggregate = np.asarray(aggregate)
    if not 0 <= k <= len(aggregate):
        raise ValueError(f"k must satisfy 0 <= k <= {len(aggregate)}, got {k}")
    order = np.argsort(-aggregate, kind="stable")
    pred = np.zeros(len(aggregate), dtype=np.int64)
    pred[order[:k]] = 1
    return pred


def threshold_tail_p(aggregate: np.ndarray, n_sensors: int, epsilon: float,
                     allow_any_epsilon: bool = False):
    """Fixed streaming threshold N * (-log10 eps); predictions A > threshold.

    `epsilon` must be one of TAIL_EPSILONS unless explicitly overridden.
    """
    if not allow_any_epsilon and not any(
        math.isclose(epsilon, e, rel_tol=1e-9) for e in TAIL_EPSILONS
    ):
        raise ValueError(
            f"epsilon {epsilon} not in {TAIL_EPSILONS}; pass allow_any_epsilon=True to override"
        )
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    threshold = n_sensors * (-math.log10(epsilon))
    return threshold, (np.asarray(aggregate) > threshold).astype(np.int64)


# ---------------------------------------------------------------------
# score series container / CSV round-trip
# ---------------------------------------------------------------------

@dataclass
class ScoreSeries:
    """Per-timestamp scores: errors, sensor scores, aggregate, decisions."""

    er: np.ndarray                 # [T, S]
    sensor_scores: np.ndarray      # [T, S]
    aggregate: np.ndarray          # [T]
    smoothed: bool = False
    threshold: float | None = None
    predictions: np.ndarray | None = None

    def __post_init__(self):
        if not np.allclose(self.aggregate, self.sensor_scores.sum(axis=1), atol=1e-9):
            raise ValueError("aggregate does not equal the sensor sum of scores")

    def write_csv(self, path, include_sensor_scores: bool = False):
        preds = self.predictions
        if preds is None:
            preds = np.zeros(len(self.aggregate), dtype=np.int64)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["timestamp", "score", "prediction"]
            if include_sensor_scores:
                header += [f"a_{i}" for i in range(self.sensor_scores.shape[1])]
            writer.writerow(header)
            for t in range(len(self.aggregate)):
                row = [t, repr(float(self.aggregate[t])), int(preds[t])]
                if include_sensor_scores:
                    row += [repr(float(v)) for v in self.sensor_scores[t]]
                writer.writerow(row)

    @staticmethod
    def read_csv(path):
        """Read back (aggregate, predictions, sensor_scores|None)."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            has_sensors = len(header) > 3
            agg, preds, sensors = [], [], []
            for row in reader:
                agg.append(float(row[1]))
                preds.append(int(row[2]))
                if has_sensors:
                    sensors.append([float(v) for v in row[3:]])
        return (
            np.asarray(agg),
            np.asarray(preds, dtype=np.int64),
            np.asarray(sensors) if has_sensors else None,
        )
