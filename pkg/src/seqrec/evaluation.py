"""Leave-one-out ranking evaluation: Recall@K and NDCG@K over 101 candidates.

Each user's held-out item is ranked against 100 popularity-sampled
negatives the user never interacted with. Ties rank the ground truth
below equal-scored negatives, so a constant-score model earns nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SplitDataset, build_eval_instance, negatives_for_user

SEED_NEGATIVES = 4
_SPLIT_CODES = {"val": 0, "test": 1}


def rank_and_score(scores, gt_index: int, k_list=(5, 10)) -> dict[int, tuple[float, float]]:
    """Rank one candidate list and return {K: (recall, ndcg)}.

    The rank of the ground truth counts every other candidate scoring
    greater than or equal to it (ground-truth-last tie policy). Recall@K
    is the top-K hit indicator; NDCG@K is 1/log2(rank+1) inside the top K
    and 0 outside.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gt = scores[gt_index]
    others = np.delete(scores, gt_index)
    rank = 1 + int((others >= gt).sum())
    out = {}
    for k in k_list:
        if rank <= k:
            out[k] = (1.0, 1.0 / np.log2(rank + 1.0))
        else:
            out[k] = (0.0, 0.0)
    return out


@dataclass
class MetricsReport:
    """Per-metric means over evaluated users, plus bookkeeping."""
    metrics: dict  # (metric_name, k) -> mean value
    users: int
    skipped: int
    seed: int
    k_values: tuple[int, ...]
    fingerprint: str = ""

    def __getitem__(self, key):
        return self.metrics[key]


def eval_history(user_split, which: str):
    """Observable (items, times, target, t_next) at one evaluation point.

    Validation sees the train prefix only; test additionally sees the
    validation item, keeping evaluation strictly causal.
    """
    u = user_split
    if which == "val":
        return u.train_items, u.train_times, u.val_item, u.val_time
    hist_i = np.concatenate([u.train_items, [u.val_item]])
    hist_t = np.concatenate([u.train_times, [u.val_time]])
    return hist_i, hist_t, u.test_item, u.test_time


def evaluate(model, split: SplitDataset, which: str = "test", seed: int = 0,
             k_values=(5, 10), num_negatives: int = 100,
             batch_size: int = 256, fingerprint: str = "") -> MetricsReport:
    """Score every user's held-out item against sampled negatives.

    Users with too few eligible negatives are skipped and counted. The
    negative draws depend only on (seed, split, user index), so results
    are reproducible regardless of batching.
    """
    if which not in _SPLIT_CODES:
        raise ValueError(f"unknown split {which!r}")
    code = _SPLIT_CODES[which]
    cfg = model.config
    k_values = tuple(k_values)

    instances = []
    skipped = 0
    for uidx in range(1, len(split.users) + 1):
        rng = np.random.default_rng([seed, SEED_NEGATIVES, code, uidx])
        try:
            negs = negatives_for_user(split, uidx, num_negatives, rng)
        except ValueError:
            skipped += 1
            continue
        hist_i, hist_t, target, t_next = eval_history(split.users[uidx - 1], which)
        v, t = build_eval_instance(hist_i, hist_t, t_next, cfg.max_len,
                                   cfg.mask_token)
        instances.append((v, t, target, negs))

    sums = {(m, k): 0.0 for m in ("recall", "ndcg") for k in k_values}
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        items = np.stack([c[0] for c in chunk])
        times = np.stack([c[1] for c in chunk])
        probs, _ = model.forward(items, times)
        last = probs.data[:, -1, :]
        for row, (_, _, target, negs) in zip(last, chunk):
            cand = np.concatenate([[target], negs])
            per_k = rank_and_score(row[cand - 1], 0, k_values)
            for k, (recall, ndcg) in per_k.items():
                sums[("recall", k)] += recall
                sums[("ndcg", k)] += ndcg

    done = len(instances)
    if done == 0:
        raise ValueError("no users could be evaluated")
    metrics = {key: val / done for key, val in sums.items()}
    return MetricsReport(metrics=metrics, users=done, skipped=skipped,
                         seed=seed, k_values=k_values, fingerprint=fingerprint)


def metrics_csv_lines(report: MetricsReport, dataset: str, combo: str) -> list[str]:
    """Rows for the metrics report: dataset,combo,seed_policy,metric,k,value,users."""
    lines = []
    if report.fingerprint:
        lines.append(f"# config_fingerprint={report.fingerprint}")
    lines.append("dataset,combo,seed_policy,metric,k,value,users")
    for metric in ("recall", "ndcg"):
        for k in report.k_values:
            lines.append(f"{dataset},{combo},seed={report.seed},{metric},{k},"
                         f"{report.metrics[(metric, k)]:.6f},{report.users}")
    return lines
