"""Embedding-combination grid: train and score one model per head set x seed.

Rows carry the median test metric over seeds; individual run failures are
recorded in-row and never abort the grid.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .evaluation import evaluate
from .model import ModelConfig
from .temporal import ALL_KINDS, canonical_combo
from .training import TrainSettings, train

GRID_METRICS = (("recall", 5), ("recall", 10), ("ndcg", 5), ("ndcg", 10))
GRID_HEADER = "combo,recall@5,recall@10,ndcg@5,ndcg@10,runs,failures"


@dataclass
class GridRow:
    combo: str
    medians: dict  # (metric, k) -> float, NaN when every run failed
    runs: int
    failures: int


def parse_combo(text: str) -> tuple[str, ...]:
    """Parse a '+'-joined kind list into canonical order."""
    kinds = [k.strip() for k in text.strip().split("+") if k.strip()]
    if not kinds:
        raise ValueError("empty combination")
    for k in kinds:
        if k not in ALL_KINDS:
            raise ValueError(f"unknown embedding kind {k!r}")
    return tuple(canonical_combo(kinds).split("+"))


def read_combos_file(path) -> list[tuple[str, ...]]:
    combos = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                combos.append(parse_combo(line))
    return combos


def _run_one(model_cfg: ModelConfig, settings: TrainSettings, split,
             seed: int, k_values) -> dict:
    result = train(model_cfg, settings, split, seed=seed)
    report = evaluate(result.model, split, which="test", seed=seed,
                      k_values=k_values,
                      num_negatives=settings.num_negatives,
                      batch_size=settings.eval_batch_size)
    return report.metrics


def ablation_grid(base_cfg: ModelConfig, settings: TrainSettings, split,
                  combos, seeds, jobs: int = 1, log_fn=None) -> list[GridRow]:
    """Train and evaluate every (combination, seed) pair; median per row.

    Each combination must keep the hidden size divisible by its head
    count (checked before any run starts). Runs are fully independent, so
    they may execute on ``jobs`` worker processes without changing results.
    """
    combos = [tuple(c) for c in combos]
    seeds = list(seeds)
    configs = {}
    for combo in combos:
        if base_cfg.hidden % len(combo) != 0:
            raise ValueError(
                f"hidden size {base_cfg.hidden} not divisible by "
                f"{len(combo)} heads in {canonical_combo(combo)!r}")
        configs[combo] = replace(base_cfg, head_kinds=combo)

    tasks = [(combo, seed) for combo in combos for seed in seeds]
    results: dict[tuple, dict | None] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                (combo, seed): pool.submit(_run_one, configs[combo], settings,
                                           split, seed, (5, 10))
                for combo, seed in tasks}
            for key, fut in futures.items():
                try:
                    results[key] = fut.result()
                except Exception:
                    results[key] = None
    else:
        for combo, seed in tasks:
            try:
                results[(combo, seed)] = _run_one(configs[combo], settings,
                                                  split, seed, (5, 10))
            except Exception:
                results[(combo, seed)] = None

    rows = []
    for combo in combos:
        per_metric = {key: [] for key in GRID_METRICS}
        failures = 0
        for seed in seeds:
            metrics = results[(combo, seed)]
            if metrics is None:
                failures += 1
                continue
            for key in GRID_METRICS:
                per_metric[key].append(metrics[key])
        medians = {key: (float(np.median(vals)) if vals else float("nan"))
                   for key, vals in per_metric.items()}
        row = GridRow(combo=canonical_combo(combo), medians=medians,
                      runs=len(seeds), failures=failures)
        rows.append(row)
        if log_fn is not None:
            log_fn(f"{row.combo}: ndcg@10={medians[('ndcg', 10)]:.4f} "
                   f"({failures} failed)")
    return rows


def grid_csv_lines(rows: list[GridRow], fingerprint: str = "") -> list[str]:
    lines = []
    if fingerprint:
        lines.append(f"# config_fingerprint={fingerprint}")
    lines.append(GRID_HEADER)
    for row in rows:
        vals = ",".join(f"{row.medians[key]:.6f}" for key in GRID_METRICS)
        lines.append(f"{row.combo},{vals},{row.runs},{row.failures}")
    return lines
