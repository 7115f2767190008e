"""The train / score / evaluate / ablate runs behind the CLI.

Everything here is deterministic in (config, seed): datasets, splits,
initialization, batch order, and dropout masks all derive from the run
seed, so two identical runs produce bit-identical score files.
"""

from __future__ import annotations

import copy
import csv
import json
import time
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from tsad import autodiff as ad
from tsad import metrics as M
from tsad.autodiff import AdamState, adam_step, backward, zero_grad
from tsad.config import ConfigError, RunConfig
from tsad.data import (
    TimeSeriesDataset,
    default_anomaly_spec,
    generate_synthetic,
    load_dataset,
    make_windows,
    normalize,
    split_train_val,
)
from tsad.decoder import reconstruction_error
from tsad.model import ABLATIONS, ModelConfig, ReconstructionModel
from tsad.scoring import (
    TAIL_EPSILONS,
    ScoreSeries,
    aggregate_scores,
    gauss_d_k,
    gauss_d_score,
    rolling_stats,
    threshold_best_f,
    threshold_tail_p,
    threshold_top_k,
)

__all__ = [
    "TrainingDivergedError",
    "TrainResult",
    "load_config_dataset",
    "train",
    "score",
    "evaluate",
    "ablate",
    "demo",
]


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss goes non-finite."""

    def __init__(self, step: int):
        super().__init__(f"training loss became non-finite at window step {step}")
        self.step = step


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    history: list          # rows: {"epoch", "train_loss", "val_loss"}; epoch 0 = untrained
    best_epoch: int


def load_config_dataset(config: RunConfig) -> TimeSeriesDataset:
    """Materialize the configured dataset (synthetic or CSV files)."""
    if config.synthetic:
        spec = default_anomaly_spec(config.synth_test_steps, seed=config.seed)[
            : config.synth_anomalies
        ]
        return generate_synthetic(
            config.synth_sensors,
            config.synth_train_steps,
            config.synth_test_steps,
            spec,
            seed=config.seed,
            noise_sigma=config.noise_sigma,
        )
    if not (config.train_path and config.test_path and config.labels_path):
        raise ConfigError("need train/test/labels paths (or synthetic = True)")
    return load_dataset(config.train_path, config.test_path, config.labels_path)


def _model_config(config: RunConfig, sensor_count: int) -> ModelConfig:
    return ModelConfig(
        sensor_count=sensor_count,
        m=config.m,
        encoder_dims=config.encoder_dims,
        head_count=config.head_count,
        knn_k=config.knn_k,
        d_agg=config.d_agg,
        fc_dims=config.fc_dims,
        dropout=config.dropout,
        output_bias=config.output_bias,
        ablation=config.ablation,
    )


def _rng_streams(seed: int):
    init_ss, dropout_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(init_ss),
        np.random.default_rng(dropout_ss),
        np.random.default_rng(shuffle_ss),
    )


def train(config: RunConfig, dataset: TimeSeriesDataset | None = None) -> TrainResult:
    """Train on anomaly-free windows, keeping the min-validation-loss
    checkpoint; writes model.npz and training_log.csv under out_dir."""
    out_dir = config.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = normalize(dataset if dataset is not None else load_config_dataset(config))
    fit_part, val_part = split_train_val(ds.train, 1.0 - config.val_ratio)
    if len(val_part) < config.l_w:
        raise ConfigError(
            f"validation split ({len(val_part)} steps) is shorter than l_w={config.l_w}"
        )
    train_windows = make_windows(fit_part, config.l_w, config.l_s).windows
    val_windows = make_windows(val_part, config.l_w, config.l_s).windows

    init_rng, dropout_rng, shuffle_rng = _rng_streams(config.seed)
    model = ReconstructionModel(_model_config(config, ds.sensor_count), rng=init_rng)
    params = model.parameter_list()
    state = AdamState.for_params(params, lr=config.lr)

    def eval_mean(windows) -> float:
        return float(model.window_losses(windows).mean())

    history = [
        {"epoch": 0, "train_loss": eval_mean(train_windows), "val_loss": eval_mean(val_windows)}
    ]
    best_val = history[0]["val_loss"]
    best_epoch = 0
    best_params = {name: t.data.copy() for name, t in model.parameters().items()}
    if config.epochs == 0:
        warnings.warn("epochs = 0: checkpoint holds the initialized model", stacklevel=2)

    micro = max(1, min(16, config.batch_size))  # bounds tape memory
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_windows))
        epoch_total, epoch_count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            zero_grad(params)
            for sub in range(0, len(chunk), micro):
                part = train_windows[chunk[sub : sub + micro]]
                loss, _ = model.batch_loss(part, training=True, rng=dropout_rng)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingDivergedError(step)
                epoch_total += value * len(part)
                epoch_count += len(part)
                backward(ad.mul(loss, len(part) / len(chunk)))
                step += len(part)
            adam_step(params, None, state)
        val_loss = eval_mean(val_windows)
        history.append(
            {"epoch": epoch, "train_loss": epoch_total / epoch_count, "val_loss": val_loss}
        )
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {name: t.data.copy() for name, t in model.parameters().items()}

    for name, tensor in model.parameters().items():
        tensor.data = best_params[name]
    checkpoint_path = out_dir / "model.npz"
    model.save(checkpoint_path)

    log_path = out_dir / "training_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])])
    return TrainResult(
        checkpoint_path=checkpoint_path, log_path=log_path, history=history, best_epoch=best_epoch
    )


# ---------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------

def _inference_starts(t2: int, l_w: int) -> list:
    """Non-overlapping window starts covering [0, t2); a final window
    ending exactly at t2 covers the remainder (its overlap re-scores
    nothing: only the new tail timestamps are taken from it)."""
    if t2 < l_w:
        raise ValueError(f"test length {t2} is shorter than l_w={l_w}")
    starts = list(range(0, t2 - l_w + 1, l_w))
    if starts[-1] + l_w < t2:
        starts.append(t2 - l_w)
    return starts


def score(config: RunConfig, checkpoint_path=None, dataset: TimeSeriesDataset | None = None):
    """Reconstruct the test set and emit the score series (scores.csv).

    Rolling statistics are seeded from the reconstruction errors of the
    last training window; the written prediction column uses the
    label-free tail-p rule at the configured epsilon.
    """
    out_dir = config.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = Path(checkpoint_path or out_dir / "model.npz")
    model = ReconstructionModel.load(checkpoint_path)
    ds = normalize(dataset if dataset is not None else load_config_dataset(config))
    if model.config.sensor_count != ds.sensor_count:
        raise ConfigError(
            f"checkpoint expects {model.config.sensor_count} sensors, "
            f"dataset has {ds.sensor_count}"
        )
    l_w = config.l_w
    t2 = len(ds.test)
    er = np.empty_like(ds.test)
    starts = _inference_starts(t2, l_w)
    with ad.no_grad():
        stack = np.stack([ds.test[s : s + l_w] for s in starts] + [ds.train[-l_w:]])
        recon = np.empty_like(stack)
        for sub in range(0, len(stack), 16):
            recon[sub : sub + 16] = model.forward_batch(stack[sub : sub + 16]).data
        covered = 0
        for i, start in enumerate(starts):
            window_er = reconstruction_error(recon[i], stack[i])
            fresh = max(covered, start)
            er[fresh : start + l_w] = window_er[fresh - start :]
            covered = start + l_w
        tail_er = reconstruction_error(recon[-1], stack[-1])

    mu, sigma = rolling_stats(er, l_w, tail_er)
    sensor_scores = gauss_d_score(er, mu, sigma)
    if config.scoring == "gauss_d_k":
        sensor_scores = gauss_d_k(sensor_scores, config.sigma_k)
    aggregate = aggregate_scores(sensor_scores)
    threshold, predictions = threshold_tail_p(
        aggregate, ds.sensor_count, config.tail_epsilon,
        allow_any_epsilon=config.allow_any_epsilon,
    )
    series = ScoreSeries(
        er=er,
        sensor_scores=sensor_scores,
        aggregate=aggregate,
        smoothed=config.scoring == "gauss_d_k",
        threshold=threshold,
        predictions=predictions,
    )
    scores_path = out_dir / "scores.csv"
    series.write_csv(scores_path, include_sensor_scores=config.include_sensor_scores)
    return series, scores_path


# ---------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------

def _prediction_metrics(pred, labels) -> dict:
    precision, recall, f1 = M.f1_point(pred, labels)
    _, _, fpa1 = M.fpa1(pred, labels)
    p_t, r_s, fc1 = M.fc1(pred, labels)
    tp, fp, fn = (
        int(np.sum((pred == 1) & (labels == 1))),
        int(np.sum((pred == 1) & (labels == 0))),
        int(np.sum((pred == 0) & (labels == 1))),
    )
    tn = int(len(labels) - tp - fp - fn)
    pred_segs = M.to_segments(pred)
    true_segs = M.to_segments(labels)
    ranges = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for level, params in M.AD_LEVELS.items():
            p, r, f = M.range_pr(pred_segs, true_segs, params)
            ranges[level] = {"precision": p, "recall": r, "f1_ptrt": f}
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "fpa1": fpa1,
        "fc1": fc1,
        "point_precision": p_t,
        "segment_recall": r_s,
        "range": ranges,
        "counts": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
    }


_BEST_F_METRIC = {"best_f1": "f1", "best_fpa1": "fpa1", "best_fc1": "fc1"}


def evaluate(config: RunConfig, aggregate=None, labels=None, scores_path=None):
    """Apply the thresholding rules and compute every metric.

    Emits report.json and plot_data.csv under out_dir and returns the
    report dict. The report always includes AU-ROC/AU-PRC, the three
    best-F rules, top-k at the true anomaly count, and all five tail-p
    epsilons plus the best of them.
    """
    out_dir = config.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    if aggregate is None:
        scores_path = Path(scores_path or out_dir / "scores.csv")
        aggregate, _, _ = ScoreSeries.read_csv(scores_path)
    ds = None
    if labels is None:
        ds = load_config_dataset(config)
        labels = ds.test_labels
    aggregate = np.asarray(aggregate, dtype=np.float64)
    labels = np.asarray(labels)
    if len(aggregate) != len(labels):
        raise ConfigError(
            f"scores length {len(aggregate)} does not match labels length {len(labels)}"
        )
    if config.synthetic:
        n_sensors = config.synth_sensors
    else:
        ds = ds if ds is not None else load_config_dataset(config)
        n_sensors = ds.sensor_count

    report = {
        "threshold_rule": config.threshold,
        "scoring": config.scoring,
        "auc_roc": M.auc_roc(aggregate, labels) if 0 < labels.sum() < len(labels) else None,
        "auc_prc": M.auc_prc(aggregate, labels),
        "thresholds": {},
    }
    for rule, metric in _BEST_F_METRIC.items():
        threshold, pred = threshold_best_f(aggregate, labels, metric)
        entry = {"threshold": threshold}
        entry.update(_prediction_metrics(pred, labels))
        report["thresholds"][rule] = entry

    k = config.top_k if config.top_k is not None else int(labels.sum())
    pred = threshold_top_k(aggregate, k)
    entry = {"k": k, "threshold": None}
    entry.update(_prediction_metrics(pred, labels))
    report["thresholds"]["top_k"] = entry

    tail = {"by_epsilon": {}}
    ranking_metric = _BEST_F_METRIC.get(config.threshold, "fc1")
    best_eps, best_value = None, -1.0
    for eps in TAIL_EPSILONS:
        threshold, pred = threshold_tail_p(aggregate, n_sensors, eps)
        entry = {"threshold": threshold}
        entry.update(_prediction_metrics(pred, labels))
        tail["by_epsilon"][f"{eps:.0e}"] = entry
        if entry[ranking_metric] > best_value:
            best_value = entry[ranking_metric]
            best_eps = f"{eps:.0e}"
    tail["best_epsilon"] = best_eps
    tail["best"] = tail["by_epsilon"][best_eps]
    report["thresholds"]["tail_p"] = tail

    primary = config.threshold if config.threshold != "tail_p" else "tail_p"
    primary_entry = (
        report["thresholds"]["tail_p"]["best"]
        if primary == "tail_p"
        else report["thresholds"][primary]
    )
    report["primary"] = {"rule": config.threshold, **primary_entry}

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2))

    plot_path = out_dir / "plot_data.csv"
    primary_threshold = primary_entry.get("threshold")
    with open(plot_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "score", "label", "threshold"])
        for t in range(len(aggregate)):
            writer.writerow(
                [
                    t,
                    repr(float(aggregate[t])),
                    int(labels[t]),
                    "" if primary_threshold is None else repr(float(primary_threshold)),
                ]
            )
    return report


# ---------------------------------------------------------------------
# ablation comparison / demo
# ---------------------------------------------------------------------

_ABLATION_TABLE_METRICS = ("f1", "fpa1", "fc1", "auc_roc", "auc_prc")


def ablate(config: RunConfig) -> dict:
    """Train/score/evaluate the four variants with a shared seed and
    dataset; writes ablation.json with the best variant per metric."""
    out_dir = config.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_config_dataset(config)
    rows = {}
    for variant in ABLATIONS:
        sub = replace(config, ablation=variant, out_dir=str(out_dir / variant))
        train(sub, dataset=dataset)
        series, _ = score(sub, dataset=dataset)
        report = evaluate(sub, aggregate=series.aggregate, labels=dataset.test_labels)
        best_fc1 = report["thresholds"]["best_fc1"]
        rows[variant] = {
            "f1": report["thresholds"]["best_f1"]["f1"],
            "fpa1": report["thresholds"]["best_fpa1"]["fpa1"],
            "fc1": best_fc1["fc1"],
            "auc_roc": report["auc_roc"],
            "auc_prc": report["auc_prc"],
        }
    best = {
        metric: max(rows, key=lambda v: rows[v][metric] if rows[v][metric] is not None else -1)
        for metric in _ABLATION_TABLE_METRICS
    }
    table = {"variants": rows, "best_per_metric": best}
    (out_dir / "ablation.json").write_text(json.dumps(table, indent=2))
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", *_ABLATION_TABLE_METRICS])
        for variant, row in rows.items():
            writer.writerow([variant, *[row[m] for m in _ABLATION_TABLE_METRICS]])
    return table


def demo(config: RunConfig) -> dict:
    """The end-to-end synthetic experiment: train, score, evaluate."""
    if not config.synthetic:
        config = replace(config, synthetic=True)
    started = time.time()
    dataset = load_config_dataset(config)
    result = train(config, dataset=dataset)
    series, scores_path = score(config, dataset=dataset)
    report = evaluate(config, aggregate=series.aggregate, labels=dataset.test_labels)
    initial = result.history[0]["train_loss"]
    final = result.history[-1]["train_loss"]
    summary = {
        "runtime_seconds": time.time() - started,
        "initial_train_loss": initial,
        "final_train_loss": final,
        "loss_drop": 1.0 - final / initial if initial else None,
        "best_epoch": result.best_epoch,
        "best_fc1": report["thresholds"]["best_fc1"]["fc1"],
        "auc_roc": report["auc_roc"],
        "auc_prc": report["auc_prc"],
        "checkpoint": str(result.checkpoint_path),
        "scores": str(scores_path),
    }
    (config.resolved_out_dir() / "demo_summary.json").write_text(json.dumps(summary, indent=2))
    return summary
