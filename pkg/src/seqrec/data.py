"""Interaction-log ingestion, filtering, splits, and training/eval instances.

The pipeline turns delimited implicit-feedback logs into per-user
chronological sequences, holds out the last two items per user for
validation/test, and produces fixed-length masked windows for training
plus last-position-masked instances for ranking evaluation.

Token conventions: dense item indices are 1-based; index 0 is [PAD] and
index num_items+1 is [MASK]. Neither ever appears in stored sequences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD = 0

_KNOWN_DELIMITERS = (",", "\t", "::")
_REQUIRED_COLUMNS = ("user", "item", "timestamp")
_KNOWN_COLUMNS = ("user", "item", "rating", "timestamp")


@dataclass(frozen=True)
class RawInteraction:
    user: str
    item: str
    timestamp: int


@dataclass(frozen=True)
class LogSchema:
    """Column layout of a delimited interaction log.

    ``columns`` names every field in file order; a "rating" column is read
    and discarded (implicit feedback). Timestamps are integer seconds.
    """
    delimiter: str = ","
    columns: tuple[str, ...] = ("user", "item", "rating", "timestamp")

    def __post_init__(self):
        if self.delimiter not in _KNOWN_DELIMITERS:
            raise ValueError(f"unknown delimiter {self.delimiter!r}")
        unknown = [c for c in self.columns if c not in _KNOWN_COLUMNS]
        if unknown:
            raise ValueError(f"unknown columns {unknown}")
        missing = [c for c in _REQUIRED_COLUMNS if c not in self.columns]
        if missing:
            raise ValueError(f"schema missing columns {missing}")


@dataclass
class Catalog:
    """Dense id maps plus the statistics the model and samplers need."""
    user_index: dict[str, int]
    item_index: dict[str, int]
    popularity: np.ndarray  # counts indexed by dense item id; [0] unused
    t_min: int
    t_max: int

    @property
    def num_users(self) -> int:
        return len(self.user_index)

    @property
    def num_items(self) -> int:
        return len(self.item_index)

    @property
    def mask_token(self) -> int:
        return self.num_items + 1

    def num_days(self, slack: int = 30) -> int:
        span = max(0, self.t_max - self.t_min)
        return -(-span // 86400) + 1 + slack


@dataclass
class UserSequence:
    """Chronologically ordered interactions of one user (dense item ids)."""
    items: np.ndarray
    times: np.ndarray


@dataclass
class UserSplit:
    train_items: np.ndarray
    train_times: np.ndarray
    val_item: int
    val_time: int
    test_item: int
    test_time: int
    _all_items: frozenset = field(default=None, repr=False, compare=False)

    def all_items(self) -> frozenset:
        if self._all_items is None:
            self._all_items = frozenset(self.train_items.tolist()) | {
                self.val_item, self.test_item}
        return self._all_items


@dataclass
class SplitDataset:
    users: list[UserSplit]  # position u-1 holds dense user index u
    catalog: Catalog


def ingest(path, schema: LogSchema) -> list[RawInteraction]:
    """Parse a delimited log into interactions; ratings are discarded."""
    out = []
    ncols = len(schema.columns)
    user_col = schema.columns.index("user")
    item_col = schema.columns.index("item")
    time_col = schema.columns.index("timestamp")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(schema.delimiter)
            if len(parts) != ncols:
                raise ValueError(
                    f"line {lineno}: expected {ncols} fields, got {len(parts)}")
            try:
                ts = int(float(parts[time_col]))
            except ValueError:
                raise ValueError(f"line {lineno}: bad timestamp {parts[time_col]!r}")
            if ts < 0:
                raise ValueError(f"line {lineno}: negative timestamp")
            out.append(RawInteraction(parts[user_col], parts[item_col], ts))
    return out


def build_sequences(interactions: list[RawInteraction],
                    min_count: int = 5) -> tuple[list[UserSequence], Catalog]:
    """Filter to a dense catalog and per-user chronological sequences.

    Single-pass filtering: items with fewer than ``min_count`` interactions
    are dropped first, then users with fewer than ``min_count`` remaining
    interactions. Per-user order is by timestamp with stable ties, so equal
    timestamps keep file order. Dense ids follow first appearance in the
    retained data; popularity is counted on the retained data only.
    """
    if not interactions:
        raise ValueError("no interactions")

    item_counts: dict[str, int] = {}
    for rec in interactions:
        item_counts[rec.item] = item_counts.get(rec.item, 0) + 1
    kept = [rec for rec in interactions if item_counts[rec.item] >= min_count]

    by_user: dict[str, list[RawInteraction]] = {}
    for rec in kept:
        by_user.setdefault(rec.user, []).append(rec)
    by_user = {u: recs for u, recs in by_user.items() if len(recs) >= min_count}
    if not by_user:
        raise ValueError("dataset too sparse")

    user_index = {u: i + 1 for i, u in enumerate(by_user)}
    item_index: dict[str, int] = {}
    for rec in kept:
        if rec.user in by_user and rec.item not in item_index:
            item_index[rec.item] = len(item_index) + 1

    popularity = np.zeros(len(item_index) + 1, dtype=np.int64)
    t_min, t_max = None, None
    sequences = []
    for u in by_user:
        recs = by_user[u]
        times = np.array([r.timestamp for r in recs], dtype=np.int64)
        order = np.argsort(times, kind="stable")
        items = np.array([item_index[recs[j].item] for j in order], dtype=np.int64)
        times = times[order]
        np.add.at(popularity, items, 1)
        lo, hi = int(times[0]), int(times[-1])
        t_min = lo if t_min is None else min(t_min, lo)
        t_max = hi if t_max is None else max(t_max, hi)
        sequences.append(UserSequence(items=items, times=times))

    catalog = Catalog(user_index=user_index, item_index=item_index,
                      popularity=popularity, t_min=t_min, t_max=t_max)
    return sequences, catalog


def leave_one_out_split(sequences: list[UserSequence],
                        catalog: Catalog) -> SplitDataset:
    """Last item to test, second-to-last to validation, the rest to train."""
    users = []
    for seq in sequences:
        if len(seq.items) < 3:
            raise ValueError("cannot split a sequence shorter than 3")
        users.append(UserSplit(
            train_items=seq.items[:-2].copy(),
            train_times=seq.times[:-2].copy(),
            val_item=int(seq.items[-2]), val_time=int(seq.times[-2]),
            test_item=int(seq.items[-1]), test_time=int(seq.times[-1]),
        ))
    return SplitDataset(users=users, catalog=catalog)


def sample_training_window(items: np.ndarray, times: np.ndarray,
                           length: int, rng: np.random.Generator,
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous window ending at a uniformly chosen position, left-padded.

    The endpoint ranges over every position of the sequence, so short
    prefixes occur as padded windows and every prefix gets training signal.
    """
    if length < 1:
        raise ValueError("window length must be >= 1")
    n = len(items)
    if n == 0:
        raise ValueError("empty train region")
    end = int(rng.integers(1, n + 1))
    start = max(0, end - length)
    return _left_pad(items[start:end], times[start:end], length)


def _left_pad(items, times, length):
    pad = length - len(items)
    if pad < 0:
        raise ValueError("window longer than target length")
    out_items = np.zeros(length, dtype=np.int64)
    out_times = np.zeros(length, dtype=np.int64)
    if len(items):
        out_items[pad:] = items
        out_times[pad:] = times
    return out_items, out_times


def apply_cloze_mask(items: np.ndarray, mask_prob: float, mask_token: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Replace non-pad positions by [MASK] independently with ``mask_prob``.

    If the draw masks nothing, one uniformly chosen non-pad position is
    forcibly masked so every training row carries at least one label.
    Returns (model input, labels) where labels hold the original item at
    masked slots and 0 elsewhere.
    """
    if not 0.0 < mask_prob <= 1.0:
        raise ValueError("mask probability must be in (0, 1]")
    nonpad = items != PAD
    masked = nonpad & (rng.random(len(items)) < mask_prob)
    if not masked.any():
        masked[rng.choice(np.flatnonzero(nonpad))] = True
    inputs = np.where(masked, mask_token, items)
    labels = np.where(masked, items, PAD)
    return inputs, labels


def build_eval_instance(hist_items: np.ndarray, hist_times: np.ndarray,
                        t_next: int, length: int, mask_token: int,
                        ) -> tuple[np.ndarray, np.ndarray]:
    """History followed by a [MASK] slot carrying the target timestamp."""
    if len(hist_items) == 0:
        raise ValueError("empty history")
    keep = min(length - 1, len(hist_items))
    items = np.concatenate([np.asarray(hist_items[len(hist_items) - keep:], dtype=np.int64),
                            [mask_token]])
    times = np.concatenate([np.asarray(hist_times[len(hist_times) - keep:], dtype=np.int64),
                            [t_next]])
    return _left_pad(items, times, length)


def sample_negatives(exclude_items, popularity: np.ndarray, k: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw k distinct negatives, probability proportional to popularity.

    Items the user ever interacted with (train, validation and test) must
    all be excluded by the caller via ``exclude_items``.
    """
    ok = np.ones(len(popularity), dtype=bool)
    ok[PAD] = False
    ok[np.fromiter(exclude_items, dtype=np.int64, count=len(exclude_items))] = False
    eligible = np.flatnonzero(ok)
    if len(eligible) < k:
        raise ValueError(
            f"only {len(eligible)} eligible negatives, need {k}")
    weights = popularity[eligible].astype(np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError("no popularity mass among eligible items")
    return rng.choice(eligible, size=k, replace=False, p=weights / total)


def negatives_for_user(split: SplitDataset, user_idx: int, k: int,
                       rng: np.random.Generator) -> np.ndarray:
    u = split.users[user_idx - 1]
    return sample_negatives(u.all_items(), split.catalog.popularity, k, rng)


# ---------------------------------------------------------------------------
# preprocessed cache
# ---------------------------------------------------------------------------

_CATALOG_HEADER = "seqrec-catalog v1"


def save_cache(cache_dir, sequences: list[UserSequence], catalog: Catalog) -> None:
    """Write the plain-text catalog and binary sequence files."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    lines = [_CATALOG_HEADER,
             f"num_items\t{catalog.num_items}",
             f"num_users\t{catalog.num_users}",
             f"t_min\t{catalog.t_min}",
             f"t_max\t{catalog.t_max}"]
    for ext, idx in catalog.user_index.items():
        lines.append(f"user\t{ext}\t{idx}")
    for ext, idx in catalog.item_index.items():
        lines.append(f"item\t{ext}\t{idx}\t{int(catalog.popularity[idx])}")
    (cache_dir / "catalog.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with open(cache_dir / "sequences.bin", "wb") as fh:
        for seq in sequences:
            fh.write(struct.pack("<q", len(seq.items)))
            fh.write(seq.items.astype("<i8").tobytes())
            fh.write(seq.times.astype("<i8").tobytes())


def load_cache(cache_dir) -> tuple[list[UserSequence], Catalog]:
    cache_dir = Path(cache_dir)
    text = (cache_dir / "catalog.txt").read_text(encoding="utf-8").splitlines()
    if not text or text[0] != _CATALOG_HEADER:
        raise ValueError("not a seqrec catalog file")
    meta = {}
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    counts: dict[int, int] = {}
    for line in text[1:]:
        parts = line.split("\t")
        if parts[0] == "user":
            user_index[parts[1]] = int(parts[2])
        elif parts[0] == "item":
            item_index[parts[1]] = int(parts[2])
            counts[int(parts[2])] = int(parts[3])
        else:
            meta[parts[0]] = int(parts[1])
    popularity = np.zeros(meta["num_items"] + 1, dtype=np.int64)
    for idx, c in counts.items():
        popularity[idx] = c
    catalog = Catalog(user_index=user_index, item_index=item_index,
                      popularity=popularity,
                      t_min=meta["t_min"], t_max=meta["t_max"])

    sequences = []
    raw = (cache_dir / "sequences.bin").read_bytes()
    offset = 0
    for _ in range(meta["num_users"]):
        (n,) = struct.unpack_from("<q", raw, offset)
        offset += 8
        items = np.frombuffer(raw, dtype="<i8", count=n, offset=offset).astype(np.int64)
        offset += 8 * n
        times = np.frombuffer(raw, dtype="<i8", count=n, offset=offset).astype(np.int64)
        offset += 8 * n
        sequences.append(UserSequence(items=items, times=times))
    if offset != len(raw):
        raise ValueError("sequence file has trailing bytes")
    return sequences, catalog
