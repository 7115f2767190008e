"""Run configuration: defaults, named dataset profiles, a flat key=value
config-file format, and typed override merging (defaults < profile < file
< explicit overrides)."""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

__all__ = ["RunConfig", "PROFILES", "parse_config_file", "make_config", "ConfigError"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    # data source: CSV paths, or the synthetic generator
    train_path: str | None = None
    test_path: str | None = None
    labels_path: str | None = None
    synthetic: bool = False
    synth_sensors: int = 8
    synth_train_steps: int = 4000
    synth_test_steps: int = 2000
    synth_anomalies: int = 6
    noise_sigma: float = 0.05
    # windowing / split
    l_w: int = 100
    l_s: int = 10
    val_ratio: float = 0.2
    # optimization
    epochs: int = 3
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    # model structure
    knn_k: int = 8
    m: int = 64
    encoder_dims: tuple = (256, 512, 1024, 1024)
    head_count: int = 8
    d_agg: int = 512
    fc_dims: tuple = (512, 256)
    dropout: float = 0.2
    output_bias: float = 0.5
    ablation: str = "none"
    # scoring / thresholding
    scoring: str = "gauss_d"          # gauss_d | gauss_d_k
    sigma_k: float = 1.0
    threshold: str = "best_fc1"       # best_f1 | best_fpa1 | best_fc1 | top_k | tail_p
    top_k: int | None = None          # None: use the true anomaly count
    tail_epsilon: float = 1e-3
    allow_any_epsilon: bool = False
    include_sensor_scores: bool = False
    # output
    out_dir: str = "runs/latest"

    def __post_init__(self):
        self.encoder_dims = tuple(self.encoder_dims)
        self.fc_dims = tuple(self.fc_dims)
        if self.scoring not in ("gauss_d", "gauss_d_k"):
            raise ConfigError(f"scoring must be gauss_d or gauss_d_k, got {self.scoring!r}")
        if self.threshold not in ("best_f1", "best_fpa1", "best_fc1", "top_k", "tail_p"):
            raise ConfigError(f"unknown threshold rule {self.threshold!r}")
        if not self.synthetic and self.train_path is None and self.test_path is None:
            # allowed: caller may fill paths later (e.g. CLI validation)
            pass

    def resolved_out_dir(self) -> Path:
        return Path(self.out_dir)


# Table-style defaults per public dataset, plus the desk-scale synthetic
# benchmark profile (reduced widths keep a from-scratch float64 stack
# inside laptop-CPU budgets; library defaults keep the full widths).
PROFILES = {
    "smd": dict(epochs=3, lr=1e-3, batch_size=32, knn_k=8, l_s=10),
    "msl": dict(epochs=3, lr=1e-3, batch_size=32, knn_k=4, l_s=1),
    "smap": dict(epochs=3, lr=1e-4, batch_size=32, knn_k=4, l_s=1),
    "swat": dict(epochs=3, lr=1e-2, batch_size=32, knn_k=8, l_s=10),
    "psm": dict(epochs=20, lr=1e-3, batch_size=32, knn_k=6, l_s=10),
    "synthetic": dict(
        synthetic=True,
        epochs=3,
        lr=1e-3,
        batch_size=32,
        knn_k=6,
        l_s=10,
        m=8,
        encoder_dims=(16, 24, 32, 32),
        head_count=2,
        d_agg=32,
        fc_dims=(32, 16),
        dropout=0.1,
    ),
}


def parse_config_file(path) -> dict:
    """Parse a flat `key = value` file; '#' starts a comment.

    Values are python literals where possible (numbers, tuples, booleans,
    None), otherwise bare strings.
    """
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            overrides[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            overrides[key] = value
    return overrides


def make_config(profile: str | None = None, config_file=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, profile, config file, and explicit overrides."""
    merged = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        merged.update(PROFILES[profile])
    if config_file is not None:
        merged.update(parse_config_file(config_file))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    valid = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - valid
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)
