"""Command-line entry point: preprocess, train, evaluate, ablate, gradcheck.

Every command takes a JSON config plus one-to-one override flags, writes
artifacts stamped with the config fingerprint, and on failure exits
nonzero with a final machine-parsable ``error: ...`` line (exit 2 for
usage/contract problems, 1 for runtime failures).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import ablation, config as config_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (build_sequences, ingest, leave_one_out_split, load_cache,
                   save_cache)
from .evaluation import evaluate, metrics_csv_lines
from .model import ModelConfig, TemporalMixtureModel
from .selfcheck import MICRO_TOLERANCE, micro_gradient_check
from .temporal import canonical_combo
from .training import train


class UsageError(Exception):
    """Bad invocation or missing input; maps to exit status 2."""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqrec",
        description="sequence recommender with per-head temporal embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--dataset")
        p.add_argument("--cache-dir", dest="cache_dir")
        p.add_argument("--delimiter")
        p.add_argument("--columns", help="comma-separated column names")
        p.add_argument("--h", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--max-len", dest="max_len", type=int)
        p.add_argument("--head-kinds", dest="head_kinds",
                       help="comma-separated embedding kinds")
        p.add_argument("--dropout", type=float)
        p.add_argument("--mask-prob", dest="mask_prob", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--freq", type=float)
        p.add_argument("--day-slack", dest="day_slack", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--max-epochs", dest="max_epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--windows-per-user", dest="windows_per_user", type=int)
        p.add_argument("--num-negatives", dest="num_negatives", type=int)
        p.add_argument("--k-values", dest="k_values",
                       help="comma-separated cutoffs, e.g. 5,10")
        p.add_argument("--min-count", dest="min_count", type=int)
        p.add_argument("--precision", choices=("f64", "f32"))
        p.add_argument("--jobs", type=int)

    p = sub.add_parser("preprocess", help="build the dataset cache")
    add_common(p)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    add_common(p)
    p.add_argument("--out", default="ckpt", help="checkpoint directory")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("evaluate", help="score a checkpoint on val or test")
    add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--out", help="metrics CSV path")

    p = sub.add_parser("ablate", help="run the embedding-combination grid")
    add_common(p)
    p.add_argument("--combos", help="file with one +-joined kind list per line")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", default="ablation_grid.csv")

    p = sub.add_parser("gradcheck",
                       help="finite-difference check on the micro model")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--max-entries", dest="max_entries", type=int)
    return parser


_OVERRIDE_KEYS = ("dataset", "cache_dir", "delimiter", "h", "layers",
                  "max_len", "dropout", "mask_prob", "tau", "freq",
                  "day_slack", "lr", "weight_decay", "batch_size", "patience",
                  "max_epochs", "seed", "windows_per_user", "num_negatives",
                  "min_count", "precision", "jobs")


def _resolve_config(args) -> config_mod.RunConfig:
    cfg = (config_mod.parse_config(args.config) if args.config
           else config_mod.RunConfig())
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    if getattr(args, "head_kinds", None):
        overrides["head_kinds"] = tuple(args.head_kinds.split(","))
    if getattr(args, "columns", None):
        overrides["columns"] = tuple(args.columns.split(","))
    if getattr(args, "k_values", None):
        overrides["k_values"] = tuple(int(k) for k in args.k_values.split(","))
    return config_mod.apply_overrides(cfg, overrides)


def _effective_jobs(cfg) -> int:
    jobs = cfg.jobs
    env = os.environ.get("SEQREC_THREADS")
    if env:
        jobs = min(jobs, max(1, int(env)))
    return jobs


def _load_split(cfg):
    if cfg.cache_dir and (Path(cfg.cache_dir) / "catalog.txt").exists():
        sequences, catalog = load_cache(cfg.cache_dir)
    elif cfg.dataset:
        interactions = ingest(cfg.dataset, config_mod.log_schema(cfg))
        sequences, catalog = build_sequences(interactions, cfg.min_count)
    else:
        raise UsageError("missing dataset path (set dataset or cache_dir)")
    return leave_one_out_split(sequences, catalog)


def _write_lines(path, lines) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_preprocess(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.dataset:
        raise UsageError("missing dataset path")
    if not cfg.cache_dir:
        raise UsageError("cache_dir required for preprocess")
    interactions = ingest(cfg.dataset, config_mod.log_schema(cfg))
    sequences, catalog = build_sequences(interactions, cfg.min_count)
    save_cache(cfg.cache_dir, sequences, catalog)
    print(f"cache written to {cfg.cache_dir}: {catalog.num_users} users, "
          f"{catalog.num_items} items, "
          f"{int(catalog.popularity.sum())} interactions")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    fp = config_mod.fingerprint(cfg)
    split = _load_split(cfg)
    model_cfg = config_mod.model_config(cfg, split.catalog)
    settings = config_mod.train_settings(cfg)

    log_fn = None if args.quiet else print
    result = train(model_cfg, settings, split, seed=cfg.seed, log_fn=log_fn)

    out = Path(args.out)
    header = {
        "model": model_cfg.to_dict(),
        "combo": canonical_combo(model_cfg.head_kinds),
        "seed": cfg.seed,
        "config_fingerprint": fp,
        "dataset": config_mod.dataset_label(cfg),
        "best_epoch": result.best_epoch,
        "best_val_ndcg10": result.best_metric,
    }
    ckpt = save_checkpoint(out, result.model.parameters(), header)
    _write_lines(out / "train_log.csv",
                 [f"# config_fingerprint={fp}",
                  "epoch,train_loss,val_ndcg10,seconds"] + result.log_lines)
    print(f"checkpoint written to {ckpt} "
          f"(best epoch {result.best_epoch}, "
          f"val ndcg@10 {result.best_metric:.6f})")
    return 0


def _model_from_checkpoint(path) -> tuple[TemporalMixtureModel, dict]:
    header, state = load_checkpoint(path)
    model_cfg = ModelConfig.from_dict(header["model"])
    model = TemporalMixtureModel(model_cfg, np.random.default_rng(0))
    model.load_state(state)
    return model, header


def cmd_evaluate(args) -> int:
    if not args.checkpoint:
        raise UsageError("checkpoint required")
    cfg = _resolve_config(args)
    model, header = _model_from_checkpoint(args.checkpoint)
    split = _load_split(cfg)
    if split.catalog.num_items != model.config.num_items:
        raise ValueError(
            f"checkpoint was trained on {model.config.num_items} items but "
            f"the dataset has {split.catalog.num_items}")
    report = evaluate(model, split, which=args.split, seed=cfg.seed,
                      k_values=cfg.k_values, num_negatives=cfg.num_negatives,
                      fingerprint=config_mod.fingerprint(cfg))
    lines = metrics_csv_lines(report, config_mod.dataset_label(cfg),
                              header.get("combo", ""))
    out = args.out
    if out is None:
        base = Path(args.checkpoint)
        base = base if base.is_dir() else base.parent
        out = base / f"metrics_{args.split}.csv"
    _write_lines(out, lines)
    print("\n".join(lines))
    return 0


def cmd_ablate(args) -> int:
    if not args.combos:
        raise UsageError("combos file required")
    cfg = _resolve_config(args)
    combos = ablation.read_combos_file(args.combos)
    if not combos:
        raise UsageError("combos file is empty")
    split = _load_split(cfg)
    base_cfg = config_mod.model_config(cfg, split.catalog)
    settings = config_mod.train_settings(cfg)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    rows = ablation.ablation_grid(base_cfg, settings, split, combos, seeds,
                                  jobs=_effective_jobs(cfg), log_fn=print)
    lines = ablation.grid_csv_lines(rows, config_mod.fingerprint(cfg))
    _write_lines(args.out, lines)
    print(f"grid written to {args.out} ({len(rows)} rows)")
    return 0


def cmd_gradcheck(args) -> int:
    report = micro_gradient_check(eps=args.eps, max_entries=args.max_entries)
    width = max(len(name) for name in report)
    print(f"{'parameter'.ljust(width)}  max_rel_err")
    for name, err in report.items():
        print(f"{name.ljust(width)}  {err:.3e}")
    worst = max(report.values())
    print(f"{'WORST'.ljust(width)}  {worst:.3e}  "
          f"(tolerance {MICRO_TOLERANCE:.0e})")
    if worst >= MICRO_TOLERANCE:
        print(f"error: gradient check failed ({worst:.3e} >= {MICRO_TOLERANCE:.0e})")
        return 1
    return 0


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports all
        print(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
