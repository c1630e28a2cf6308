"""Run configuration: a single JSON document with strict validation.

Unknown keys are rejected so typos fail loudly. Every stochastic or
architectural knob lives here; command-line flags override keys
one-to-one. A stable fingerprint of the normalized config is stamped
into every output artifact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .data import Catalog, LogSchema
from .model import ModelConfig
from .temporal import ALL_KINDS
from .training import TrainSettings


@dataclass(frozen=True)
class RunConfig:
    # data
    dataset: str | None = None
    delimiter: str = ","
    columns: tuple[str, ...] = ("user", "item", "rating", "timestamp")
    cache_dir: str | None = None
    min_count: int = 5
    # model
    h: int = 64
    layers: int = 2
    max_len: int = 50
    head_kinds: tuple[str, ...] = ("day", "pos", "sin", "log")
    dropout: float = 0.2
    mask_prob: float = 0.2
    tau: float = 86400.0
    freq: float = 10000.0
    day_slack: int = 30
    output_bias: bool = True
    precision: str = "f64"
    # training
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 64
    patience: int = 20
    max_epochs: int = 200
    seed: int = 0
    windows_per_user: int = 1
    last_target_windows: bool = True
    # evaluation
    k_values: tuple[int, ...] = (5, 10)
    num_negatives: int = 100
    # execution
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "head_kinds", tuple(self.head_kinds))
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        for kind in self.head_kinds:
            if kind not in ALL_KINDS:
                raise ValueError(f"unknown embedding kind {kind!r}")
        if not self.head_kinds:
            raise ValueError("head_kinds must not be empty")
        if self.h % len(self.head_kinds) != 0:
            raise ValueError(f"hidden size {self.h} not divisible by "
                             f"{len(self.head_kinds)} heads")
        # delegate the remaining column/delimiter checks
        LogSchema(delimiter=self.delimiter, columns=self.columns)
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be 'f64' or 'f32'")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def config_from_dict(raw: dict) -> RunConfig:
    unknown = [k for k in raw if k not in _FIELD_TYPES]
    if unknown:
        raise ValueError(f"unknown config keys {unknown}")
    return RunConfig(**raw)


def parse_config(path) -> RunConfig:
    """Load and validate a JSON config file; defaults fill absent keys."""
    path = Path(path)
    if not path.exists():
        raise ValueError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    return config_from_dict(raw)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Replace config keys with command-line values (None entries skipped)."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return cfg
    return replace(cfg, **updates)


def fingerprint(cfg: RunConfig) -> str:
    """Stable 12-hex-digit hash of the normalized config."""
    blob = json.dumps(asdict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def log_schema(cfg: RunConfig) -> LogSchema:
    return LogSchema(delimiter=cfg.delimiter, columns=cfg.columns)


def model_config(cfg: RunConfig, catalog: Catalog) -> ModelConfig:
    return ModelConfig(
        num_items=catalog.num_items,
        hidden=cfg.h,
        num_layers=cfg.layers,
        head_kinds=cfg.head_kinds,
        max_len=cfg.max_len,
        dropout=cfg.dropout,
        mask_prob=cfg.mask_prob,
        tau=cfg.tau,
        freq=cfg.freq,
        num_days=catalog.num_days(cfg.day_slack),
        t_min=catalog.t_min,
        output_bias=cfg.output_bias,
        precision=cfg.precision,
    )


def train_settings(cfg: RunConfig) -> TrainSettings:
    return TrainSettings(
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        batch_size=cfg.batch_size,
        patience=cfg.patience,
        max_epochs=cfg.max_epochs,
        windows_per_user=cfg.windows_per_user,
        last_target_windows=cfg.last_target_windows,
        num_negatives=cfg.num_negatives,
    )


def dataset_label(cfg: RunConfig) -> str:
    """Short name identifying the data source in report rows."""
    if cfg.dataset:
        return Path(cfg.dataset).stem
    if cfg.cache_dir:
        return Path(cfg.cache_dir).name
    return "unknown"
