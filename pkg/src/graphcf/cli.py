"""Command-line entry point: preprocess, train, eval, tune.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
All randomness derives from the config seed (overridable with --seed), and
no behavior depends on environment state beyond the declared flags and
files.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, parse_config
from .datahub import (
    ColumnFormat,
    file_sha256,
    filter_low_rating,
    kcore_filter,
    load_dataset,
    load_interactions,
    split_dataset,
    write_dataset,
)
from .engine import predict_forward, train, tune
from .errors import ConfigError, GraphCFError, StructuralError
from .evalkit import batched_full_eval
from .models import load_checkpoint

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphcf",
        description="Self-supervised graph collaborative filtering engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False, data_flag=False, checkpoint=False):
        p.add_argument("--config", required=True, help="experiment configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="evaluation threads (0 = auto); metrics are thread-count independent")
        p.add_argument("--quiet", action="store_true", help="only warnings and errors")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
        if data_flag:
            p.add_argument("--data", default=None,
                           help="preprocessed dataset directory (default: config data.dir)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint directory")

    common(sub.add_parser("preprocess", help="raw interactions -> dataset directory"),
           out_required=True)
    common(sub.add_parser("train", help="train one model"), out_required=True, data_flag=True)
    common(sub.add_parser("eval", help="evaluate a checkpoint on the test split"),
           data_flag=True, checkpoint=True)
    common(sub.add_parser("tune", help="grid-search hyperparameters"),
           out_required=True, data_flag=True)
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides({"data.seed": args.seed})
    return cfg


def _threads(args) -> int:
    if args.threads < 0:
        raise ConfigError("--threads must be >= 0")
    return args.threads if args.threads > 0 else (os.cpu_count() or 1)


def _dataset(args, cfg: ExperimentConfig):
    data_dir = args.data or cfg.data.dir
    if not data_dir:
        raise ConfigError("no dataset directory: pass --data or set data.dir in the config")
    return load_dataset(data_dir)


def _cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    if not cfg.data.path:
        raise ConfigError("preprocess requires data.path in the config")
    fmt = ColumnFormat(cfg.data.columns, cfg.data.delimiter)
    rows = load_interactions(cfg.data.path, fmt)
    log.info("loaded %d interactions from %s", len(rows), cfg.data.path)
    if cfg.data.min_rating is not None:
        rows = filter_low_rating(rows, cfg.data.min_rating)
        log.info("%d interactions after min_rating >= %s", len(rows), cfg.data.min_rating)
    rows = kcore_filter(rows, cfg.data.kcore)
    log.info("%d interactions after %d-core filtering", len(rows), cfg.data.kcore)
    dataset = split_dataset(rows, cfg.data.ratios, cfg.data.seed)
    write_dataset(dataset, args.out, {
        "kcore": cfg.data.kcore,
        "min_rating": "null" if cfg.data.min_rating is None else cfg.data.min_rating,
        "ratios": ",".join(repr(r) for r in cfg.data.ratios),
        "seed": cfg.data.seed,
        "source_sha256": file_sha256(cfg.data.path),
    })
    log.info("wrote dataset (%d users, %d items, %d train pairs) to %s",
             dataset.n_users, dataset.n_items, len(dataset.train), args.out)
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset = _dataset(args, cfg)
    settings = cfg.train_settings(threads=_threads(args))
    state, report = train(
        cfg.model, dataset, settings,
        out_dir=args.out, snapshot=cfg.snapshot_text(), quiet=args.quiet,
    )
    log.info("best epoch %d, validation %s@%d = %.5f", state.best_epoch,
             settings.objective_metric, settings.objective_cutoff, state.best_metric)
    for key, value in report.flat().items():
        print(f"test.{key}\t{value!r}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    dataset = _dataset(args, cfg)
    e0, meta = load_checkpoint(args.checkpoint)
    if int(meta["n_users"]) != dataset.n_users or int(meta["n_items"]) != dataset.n_items:
        raise StructuralError(
            f"checkpoint was trained on {meta['n_users']} users / {meta['n_items']} items, "
            f"dataset has {dataset.n_users} / {dataset.n_items}"
        )
    fwd = predict_forward(e0, dataset.adjacency, int(meta["layers"]), dataset.n_users)
    report = batched_full_eval(
        fwd, dataset, "test", cfg.eval.cutoffs, cfg.eval.user_batch, _threads(args),
    )
    for key, value in report.flat().items():
        print(f"test.{key}\t{value!r}")
    return 0


def _cmd_tune(args) -> int:
    cfg = _load_config(args)
    if cfg.tune is None:
        raise ConfigError("tune requires a tune section in the config")
    dataset = _dataset(args, cfg)
    threads = _threads(args)
    objective = f"{cfg.tune.objective_metric}@{cfg.tune.objective_cutoff}"

    def run_trial(overrides, seed, trial_dir):
        trial_cfg = cfg.with_overrides(
            dict(overrides) | {"data.seed": seed}, drop_tune=True,
        )
        settings = trial_cfg.train_settings(threads=threads)
        if objective != trial_cfg.train.objective:
            settings = dataclasses.replace(
                settings,
                objective_metric=cfg.tune.objective_metric,
                objective_cutoff=cfg.tune.objective_cutoff,
            )
        state, _ = train(
            trial_cfg.model, dataset, settings,
            out_dir=trial_dir, snapshot=trial_cfg.snapshot_text(), quiet=True,
        )
        return state.best_metric

    best, results = tune(cfg.tune, run_trial, cfg.data.seed, args.out)
    best_cfg = cfg.with_overrides(best.overrides, drop_tune=True)
    (Path(args.out) / "best_config.snapshot").write_text(
        best_cfg.snapshot_text(), encoding="utf-8",
    )
    log.info("%d trials, best trial %d (%s = %.5f)",
             len(results), best.index, objective, best.objective)
    for key, value in best.overrides.items():
        print(f"best.{key}\t{value}")
    print(f"best.objective\t{best.objective!r}")
    return 0


_DISPATCH = {
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "tune": _cmd_tune,
}


def run_subcommand(argv) -> int:
    """Parse argv and run one subcommand, mapping failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _DISPATCH[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GraphCFError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
