"""Built-in differentiability check on a micro model configuration.

Builds the smallest interesting model (one layer, one absolute and one
relative head, 20 items, windows of 8) on a fixed synthetic batch, then
compares every parameter's analytic gradient against central finite
differences. Exercises the whole differentiable surface: lookups, both
head types, pre-norm residual layers, the tied prediction head, and the
masked loss.
"""

from __future__ import annotations

import numpy as np

from .gradcheck import finite_difference_check
from .model import ModelConfig, TemporalMixtureModel, cloze_loss

MICRO_TOLERANCE = 1e-3


def micro_config() -> ModelConfig:
    return ModelConfig(num_items=20, hidden=8, num_layers=1,
                       head_kinds=("pos", "sin"), max_len=8, dropout=0.0,
                       mask_prob=0.3, tau=3600.0, freq=10000.0,
                       num_days=8, t_min=0)


def micro_batch(cfg: ModelConfig, rng: np.random.Generator):
    """Fixed batch of two rows covering pads, masks, and multiple labels."""
    items = rng.integers(1, cfg.num_items + 1, size=(2, cfg.max_len))
    times = np.sort(rng.integers(0, 500_000, size=(2, cfg.max_len)), axis=-1)
    items[0, :2] = 0
    times[0, :2] = 0
    labels = np.zeros_like(items)
    for row, col in ((0, 5), (1, 3), (1, 7)):
        labels[row, col] = items[row, col]
        items[row, col] = cfg.mask_token
    return items, times, labels


def micro_gradient_check(eps: float = 1e-5, seed: int = 7,
                         max_entries: int | None = None) -> dict[str, float]:
    """Max relative gradient error per parameter on the micro model."""
    cfg = micro_config()
    rng = np.random.default_rng(seed)
    model = TemporalMixtureModel(cfg, rng)
    items, times, labels = micro_batch(cfg, rng)

    def model_fn():
        probs, _ = model.forward(items, times)
        return cloze_loss(probs, labels)

    return finite_difference_check(model_fn, model.parameters(), eps=eps,
                                   max_entries=max_entries, seed=seed)
