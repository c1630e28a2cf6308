"""Synthetic interaction logs with controllable structure for tests.

Two families:

* repeating-pattern users: short fixed item cycles, fully memorizable,
  for overfitting and smoke tests.
* timed sessions: franchise/episode catalogs where the choice between
  continuing a franchise and switching to a recently released one depends
  on the time gap and the calendar, so timestamps carry real signal that
  order alone cannot recover.
"""

from __future__ import annotations

import numpy as np

from seqrec.data import RawInteraction

BASE_T = 1_000_000_000
DAY = 86400


def write_log(path, interactions, delimiter=",", with_rating=True):
    lines = []
    for rec in interactions:
        fields = [rec.user, rec.item] + (["3"] if with_rating else []) + [str(rec.timestamp)]
        lines.append(delimiter.join(fields))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def repeating_pattern_log(num_users=32, pattern_len=4, repeats=6,
                          num_items=None, seed=0) -> list[RawInteraction]:
    """Each user cycles a fixed item pattern, so the sequences are fully
    memorizable. With ``num_items`` unset the patterns are disjoint across
    users (any unmasked item identifies the whole window); giving a small
    pool instead makes users share items and injects ambiguity."""
    rng = np.random.default_rng(seed)
    out = []
    for u in range(num_users):
        if num_items is None:
            pattern = np.arange(u * pattern_len + 1, (u + 1) * pattern_len + 1)
        else:
            pattern = rng.choice(np.arange(1, num_items + 1), size=pattern_len,
                                 replace=False)
        t = BASE_T + int(rng.integers(0, 30)) * DAY
        for i in range(pattern_len * repeats):
            # fixed cadence: an hour between items, a day between repetitions,
            # so the time pattern repeats along with the items
            t += DAY if i % pattern_len == 0 else 3600
            out.append(RawInteraction(f"u{u}", f"i{pattern[i % pattern_len]}", t))
    return out


def timed_sessions_log(num_users=500, num_franchises=60, episodes=5,
                       seed=11) -> list[RawInteraction]:
    """Users binge franchises in episode order with gap-driven behavior.

    Within a session (gaps of minutes) the user always continues the
    current franchise; after a break of a day or more they always switch
    to a franchise released recently relative to the calendar day. The
    continue-or-switch decision is therefore a function of the wall-clock
    gap and the calendar, both invisible to a model that only sees
    positions in the sequence.
    """
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, num_franchises + 1) ** 0.8
    release_day = rng.permutation(
        np.linspace(0, 540, num_franchises).astype(np.int64))

    def item_id(franchise: int, episode: int) -> str:
        return f"f{franchise}e{episode}"

    def pick_franchise(day: int, exclude: int) -> int:
        age = day - release_day
        recency = np.where((age >= 0) & (age < 45), 1.0,
                           np.where(age >= 0, 0.02, 0.0))
        w = weights * recency
        w[exclude] = 0.0
        if w.sum() <= 0:
            w = weights.copy()
            w[exclude] = 0.0
        return int(rng.choice(num_franchises, p=w / w.sum()))

    out = []
    for u in range(num_users):
        day = int(rng.integers(60, 600))
        t = BASE_T + day * DAY + int(rng.integers(0, DAY))
        length = int(rng.integers(15, 61))
        franchise = pick_franchise(day, -1)
        episode = 0
        for _ in range(length):
            out.append(RawInteraction(f"u{u}", item_id(franchise, episode), t))
            episode += 1
            if rng.random() < 0.6:
                gap = int(rng.integers(600, 5400))  # same session
            else:
                gap = int(DAY + rng.exponential(3.0) * DAY)
            t += gap
            day = (t - BASE_T) // DAY
            if gap >= DAY or episode >= episodes:
                franchise, episode = pick_franchise(day, franchise), 0
    return out


def interactions_to_split(interactions, min_count=5):
    from seqrec.data import build_sequences, leave_one_out_split
    sequences, catalog = build_sequences(interactions, min_count=min_count)
    return leave_one_out_split(sequences, catalog)
