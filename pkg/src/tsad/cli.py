"""Command line: train / score / evaluate / ablate / demo / gen-synth.

Every RunConfig field is mirrored as a flag (underscores become dashes);
values merge over an optional --profile and --config file. Exit codes:
0 success, 2 configuration/usage, 3 data format, 4 training divergence,
1 unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import MISSING, fields

from tsad.config import PROFILES, ConfigError, RunConfig, make_config
from tsad.data import DataFormatError, save_dataset
from tsad import pipeline

_BOOL_FIELDS = {"synthetic", "allow_any_epsilon", "include_sensor_scores"}
_TUPLE_FIELDS = {"encoder_dims", "fc_dims"}


def _tuple_of_ints(text: str):
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--profile", choices=sorted(PROFILES), default=None,
                        help="named defaults (dataset profiles / synthetic)")
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="flat key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in _BOOL_FIELDS:
            parser.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif f.name in _TUPLE_FIELDS:
            parser.add_argument(flag, type=_tuple_of_ints, default=None, metavar="D1,D2,...")
        else:
            default = f.default if f.default is not MISSING else None
            kind = type(default) if default is not None else str
            kind = str if kind is type(None) else kind
            if f.name == "top_k":
                kind = int
            parser.add_argument(flag, type=kind, default=None)


def _config_from(args) -> RunConfig:
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return make_config(profile=args.profile, config_file=args.config, overrides=overrides)


# ---------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------

def _cmd_gen_synth(args) -> int:
    args.synthetic = True
    config = _config_from(args)
    dataset = pipeline.load_config_dataset(config)
    paths = save_dataset(dataset, config.out_dir)
    for key, path in paths.items():
        print(f"{key}: {path}")
    return 0


def _cmd_train(args) -> int:
    result = pipeline.train(_config_from(args))
    first, last = result.history[0], result.history[-1]
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    print(
        f"train loss {first['train_loss']:.6f} -> {last['train_loss']:.6f}; "
        f"best val {result.history[result.best_epoch]['val_loss']:.6f} "
        f"(epoch {result.best_epoch})"
    )
    return 0


def _cmd_score(args) -> int:
    config = _config_from(args)
    series, path = pipeline.score(config, checkpoint_path=args.checkpoint)
    flagged = int(series.predictions.sum()) if series.predictions is not None else 0
    print(f"scores: {path}")
    print(f"tail-p threshold {series.threshold:.4f} flags {flagged} timestamps")
    return 0


def _cmd_evaluate(args) -> int:
    config = _config_from(args)
    report = pipeline.evaluate(config, scores_path=args.scores)
    auc_roc = report["auc_roc"]
    print(f"AU-ROC {auc_roc:.4f}" if auc_roc is not None else "AU-ROC undefined (single class)")
    print(f"AU-PRC {report['auc_prc']:.4f}")
    for rule in ("best_f1", "best_fpa1", "best_fc1", "top_k"):
        entry = report["thresholds"][rule]
        print(
            f"{rule}: F1 {entry['f1']:.4f}  Fpa1 {entry['fpa1']:.4f}  Fc1 {entry['fc1']:.4f}"
        )
    tail = report["thresholds"]["tail_p"]
    best = tail["best"]
    print(
        f"tail_p (best eps {tail['best_epsilon']}): "
        f"F1 {best['f1']:.4f}  Fpa1 {best['fpa1']:.4f}  Fc1 {best['fc1']:.4f}"
    )
    print(f"report: {config.resolved_out_dir() / 'report.json'}")
    return 0


def _cmd_ablate(args) -> int:
    config = _config_from(args)
    table = pipeline.ablate(config)
    metrics = ("f1", "fpa1", "fc1", "auc_roc", "auc_prc")
    header = "variant".ljust(16) + "".join(m.rjust(10) for m in metrics)
    print(header)
    for variant, row in table["variants"].items():
        cells = "".join(
            f"{row[m]:.4f}".rjust(10) if row[m] is not None else "n/a".rjust(10)
            for m in metrics
        )
        print(variant.ljust(16) + cells)
    print("best per metric: " + json.dumps(table["best_per_metric"]))
    return 0


def _cmd_demo(args) -> int:
    if args.profile is None:
        args.profile = "synthetic"
    summary = pipeline.demo(_config_from(args))
    for key in ("initial_train_loss", "final_train_loss", "loss_drop",
                "best_fc1", "auc_roc", "auc_prc", "runtime_seconds"):
        value = summary[key]
        print(f"{key}: {value:.4f}" if isinstance(value, float) else f"{key}: {value}")
    print(f"checkpoint: {summary['checkpoint']}")
    print(f"scores: {summary['scores']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsad",
        description="Reconstruction-based multivariate time-series anomaly detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("train", _cmd_train, "train a model, keep the min-val-loss checkpoint"),
        ("score", _cmd_score, "score a test set with a trained checkpoint"),
        ("evaluate", _cmd_evaluate, "threshold scores and compute all metrics"),
        ("ablate", _cmd_ablate, "compare the full model against the three ablations"),
        ("demo", _cmd_demo, "run the synthetic end-to-end experiment"),
        ("gen-synth", _cmd_gen_synth, "write a synthetic dataset as CSV files"),
    ]
    for name, handler, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        if name == "score":
            p.add_argument("--checkpoint", default=None, metavar="FILE")
        if name == "evaluate":
            p.add_argument("--scores", default=None, metavar="FILE")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except pipeline.TrainingDivergedError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - unexpected
        print(f"unexpected error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
