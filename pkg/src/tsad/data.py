"""Dataset ingestion, normalization, windowing, and synthetic benchmarks.

The canonical on-disk format is CSV: train/test files carry a header row
of sensor names and one timestamp per row; labels are a single {0,1}
column (optional header). All functions are pure: they return new
objects and never mutate their inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "DataFormatError",
    "TimeSeriesDataset",
    "WindowBatch",
    "AnomalySpec",
    "load_dataset",
    "save_dataset",
    "normalize",
    "make_windows",
    "split_train_val",
    "generate_synthetic",
    "default_anomaly_spec",
]


class DataFormatError(ValueError):
    """A dataset file violates the expected CSV contract."""


@dataclass
class TimeSeriesDataset:
    """Train/test matrices with labels and (optional) normalization stats.

    ``train_min``/``train_max`` are populated by :func:`normalize` and are
    always fit on the training split only.
    """

    train: np.ndarray            # [T1, S]
    test: np.ndarray             # [T2, S]
    test_labels: np.ndarray      # [T2] in {0, 1}
    sensor_names: list = field(default_factory=list)
    entity_id: str = ""
    train_min: np.ndarray | None = None
    train_max: np.ndarray | None = None

    @property
    def sensor_count(self) -> int:
        return self.train.shape[1]


@dataclass
class WindowBatch:
    """Sliding windows cut from one series: windows[j] starts at start_indices[j]."""

    windows: np.ndarray        # [N, l_w, S]
    start_indices: np.ndarray  # [N]
    l_w: int
    l_s: int


# ---------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------

def _read_matrix(path) -> tuple[np.ndarray, list]:
    """Parse a header+numbers CSV into a float matrix, with line-precise errors."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: file does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        names = [h.strip() for h in header]
        width = len(names)
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != width:
                raise DataFormatError(
                    f"{path}: line {lineno} has {len(cells)} cells, expected {width}"
                )
            parsed = np.empty(width)
            for col, cell in enumerate(cells):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: non-numeric cell at line {lineno}, column {col + 1}: {cell!r}"
                    ) from None
                if math.isnan(value) or math.isinf(value):
                    raise DataFormatError(
                        f"{path}: non-finite cell at line {lineno}, column {col + 1}"
                    )
                parsed[col] = value
            rows.append(parsed)
    if not rows:
        raise DataFormatError(f"{path}: no data rows after the header")
    return np.vstack(rows), names


def _read_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: file does not exist")
    values = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != 1:
                raise DataFormatError(f"{path}: line {lineno}: labels must be a single column")
            cell = cells[0].strip()
            if lineno == 1 and not _is_number(cell):
                continue  # header row
            if cell not in ("0", "1", "0.0", "1.0"):
                raise DataFormatError(
                    f"{path}: line {lineno}: label must be 0 or 1, got {cell!r}"
                )
            values.append(int(float(cell)))
    if not values:
        raise DataFormatError(f"{path}: no labels found")
    return np.asarray(values, dtype=np.int64)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_dataset(train_path, test_path, labels_path, entity_id: str = "") -> TimeSeriesDataset:
    """Load train/test/label CSVs into a dataset, validating agreement.

    Raises :class:`DataFormatError` for ragged rows, non-numeric or
    non-finite cells (with line/column), mismatched sensor counts, or a
    labels/test length mismatch (naming both lengths).
    """
    train, names = _read_matrix(train_path)
    test, test_names = _read_matrix(test_path)
    if train.shape[1] != test.shape[1]:
        raise DataFormatError(
            f"train has {train.shape[1]} sensors but test has {test.shape[1]}"
        )
    labels = _read_labels(labels_path)
    if len(labels) != len(test):
        raise DataFormatError(
            f"labels length {len(labels)} does not match test length {len(test)}"
        )
    return TimeSeriesDataset(
        train=train,
        test=test,
        test_labels=labels,
        sensor_names=names if names else test_names,
        entity_id=entity_id or Path(train_path).stem,
    )


def save_dataset(dataset: TimeSeriesDataset, out_dir) -> dict:
    """Write train.csv / test.csv / labels.csv; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = dataset.sensor_names or [f"s{i}" for i in range(dataset.sensor_count)]
    paths = {
        "train": out_dir / "train.csv",
        "test": out_dir / "test.csv",
        "labels": out_dir / "labels.csv",
    }
    for key, matrix in (("train", dataset.train), ("test", dataset.test)):
        with open(paths[key], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for row in matrix:
                writer.writerow([repr(float(v)) for v in row])
    with open(paths["labels"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for v in dataset.test_labels:
            writer.writerow([int(v)])
    return paths


# ---------------------------------------------------------------------
# normalization / windowing / splitting
# ---------------------------------------------------------------------

def normalize(dataset: TimeSeriesDataset) -> TimeSeriesDataset:
    """Min-max scale per sensor, fit on train only; test clipped to [-1, 2].

    A constant training sensor maps to 0.5 everywhere (train and test).
    """
    lo = dataset.train.min(axis=0)
    hi = dataset.train.max(axis=0)
    span = hi - lo
    flat = span <= 0

    def scale(x):
        with np.errstate(invalid="ignore", divide="ignore"):
            scaled = (x - lo) / span
        scaled[:, flat] = 0.5
        return scaled

    train = scale(dataset.train)
    test = np.clip(scale(dataset.test), -1.0, 2.0)
    return replace(dataset, train=train, test=test, train_min=lo.copy(), train_max=hi.copy())


def make_windows(series: np.ndarray, l_w: int, l_s: int) -> WindowBatch:
    """Cut overlapping windows of length `l_w` at stride `l_s`.

    Produces floor((T - l_w) / l_s) + 1 windows; requires T >= l_w.
    """
    series = np.asarray(series)
    t = series.shape[0]
    if l_s < 1:
        raise ValueError(f"stride must be >= 1, got {l_s}")
    if t < l_w:
        raise ValueError(f"series length {t} is shorter than window length {l_w}")
    starts = np.arange(0, t - l_w + 1, l_s)
    windows = np.stack([series[s : s + l_w] for s in starts])
    return WindowBatch(windows=windows, start_indices=starts, l_w=l_w, l_s=l_s)


def split_train_val(train: np.ndarray, ratio: float) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous temporal split: first `ratio` for fitting, tail for validation."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    cut = int(len(train) * ratio)
    return train[:cut], train[cut:]


# ---------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class AnomalySpec:
    """One injected anomaly: kind in {point, contextual, collective}."""

    kind: str
    start: int
    length: int = 1


_N_DRIVERS = 3


def generate_synthetic(
    S: int,
    T_train: int,
    T_test: int,
    anomaly_spec,
    seed: int,
    noise_sigma: float = 0.05,
) -> TimeSeriesDataset:
    """Correlated sinusoid mixtures with injected test anomalies.

    Each sensor mixes a few shared latent sinusoid drivers plus Gaussian
    noise. Point anomalies add a +5-sigma spike to one sensor; contextual
    anomalies invert one sensor's oscillation over the segment;
    collective anomalies re-drive half of the sensors from independently
    phased copies of the drivers, breaking cross-sensor correlation while
    preserving per-sensor marginals. Labels mark injected ranges exactly.
    """
    if S < 2:
        raise ValueError(f"need at least 2 sensors, got {S}")
    rng = np.random.default_rng(seed)
    periods = rng.uniform(30.0, 180.0, size=_N_DRIVERS)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=_N_DRIVERS)
    mixing = rng.normal(size=(S, _N_DRIVERS))
    mixing /= np.linalg.norm(mixing, axis=1, keepdims=True)
    offsets = rng.uniform(-0.3, 0.3, size=S)

    def drivers(t, phase_set):
        # t: [T] -> [T, D]
        return np.sin(2.0 * np.pi * t[:, None] / periods[None, :] + phase_set[None, :])

    t_train = np.arange(T_train, dtype=np.float64)
    t_test = np.arange(T_train, T_train + T_test, dtype=np.float64)
    det_train = drivers(t_train, phases) @ mixing.T + offsets
    det_test = drivers(t_test, phases) @ mixing.T + offsets

    labels = np.zeros(T_test, dtype=np.int64)
    for spec in anomaly_spec:
        kind, start, length = spec.kind, spec.start, spec.length
        if start < 0 or length < 1 or start + length > T_test:
            raise ValueError(
                f"anomaly range [{start}, {start + length}) exceeds test length {T_test}"
            )
        seg = slice(start, start + length)
        if kind == "point":
            hit = rng.choice(S, size=(S + 1) // 2, replace=False)
            det_test[start, hit] += 5.0 * noise_sigma
        elif kind == "contextual":
            sensor = int(rng.integers(0, S))
            det_test[seg, sensor] = 2.0 * offsets[sensor] - det_test[seg, sensor]
        elif kind == "collective":
            group = rng.choice(S, size=max(1, S // 2), replace=False)
            alt_phases = rng.uniform(0.0, 2.0 * np.pi, size=_N_DRIVERS)
            alt = drivers(t_test[seg], alt_phases) @ mixing[group].T + offsets[group]
            det_test[np.ix_(range(start, start + length), group)] = alt
        else:
            raise ValueError(f"unknown anomaly kind {kind!r}")
        labels[seg] = 1

    train = det_train + rng.normal(0.0, noise_sigma, size=det_train.shape)
    test = det_test + rng.normal(0.0, noise_sigma, size=det_test.shape)
    return TimeSeriesDataset(
        train=train,
        test=test,
        test_labels=labels,
        sensor_names=[f"s{i}" for i in range(S)],
        entity_id="synthetic",
    )


def default_anomaly_spec(T_test: int, seed: int = 0) -> list:
    """Six mixed anomaly segments spread over the test range with margins."""
    rng = np.random.default_rng(seed)
    kinds = ["point", "contextual", "collective", "point", "contextual", "collective"]
    lengths = [1, 60, 80, 1, 50, 90]
    n = len(kinds)
    specs = []
    slot = (T_test - 400) // n
    for i, (kind, length) in enumerate(zip(kinds, lengths)):
        lo = 200 + i * slot
        start = int(rng.integers(lo, lo + max(1, slot - length - 40)))
        specs.append(AnomalySpec(kind=kind, start=start, length=length))
    return specs
