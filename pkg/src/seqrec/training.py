"""Masked-window training with adaptive moments and patience-based stopping.

Every stochastic component (init, window sampling, masking, shuffling,
dropout, negative sampling) derives its generator from the single run
seed plus fixed stream labels, so a run is reproducible bit-for-bit and
independent of batching or worker layout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tape, backward
from .data import (PAD, SplitDataset, apply_cloze_mask, build_eval_instance,
                   sample_training_window)
from .evaluation import evaluate
from .model import ModelConfig, TemporalMixtureModel, cloze_loss

SEED_INIT = 1
SEED_WINDOW = 2
SEED_SHUFFLE = 3
SEED_DROPOUT = 5


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 64
    patience: int = 20
    max_epochs: int = 200
    windows_per_user: int = 1
    last_target_windows: bool = True
    num_negatives: int = 100
    eval_batch_size: int = 256


class Adam:
    """Adaptive-moment update (beta1=0.9, beta2=0.999) with bias correction.

    Weight decay, when set, is added to the gradient before the moment
    updates (coupled L2).
    """

    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.value.data) for p in self.params]
        self.v = [np.zeros_like(p.value.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.value.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainState:
    """Early-stopping bookkeeping across epochs."""
    epoch: int = 0
    best_metric: float = float("-inf")
    best_epoch: int = -1
    epochs_since_improvement: int = 0

    def record(self, metric: float) -> bool:
        improved = metric > self.best_metric
        if improved:
            self.best_metric = metric
            self.best_epoch = self.epoch
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return improved


@dataclass
class TrainResult:
    model: TemporalMixtureModel  # carries the best-validation parameters
    best_state: dict
    best_metric: float
    best_epoch: int
    final_state: dict = None  # parameters after the last completed epoch
    log_lines: list[str] = field(default_factory=list)
    epochs_run: int = 0


def epoch_instances(split: SplitDataset, model_cfg: ModelConfig,
                    settings: TrainSettings, seed: int, epoch: int):
    """Assemble the epoch's masked training rows for every user.

    Per user: ``windows_per_user`` randomly masked random-endpoint windows,
    plus (when enabled) one inference-shaped window whose final position is
    masked and timestamped with the next interaction.
    """
    n = model_cfg.max_len
    mask_token = model_cfg.mask_token
    rows = []
    for uidx, u in enumerate(split.users, start=1):
        for w in range(settings.windows_per_user):
            rng = np.random.default_rng([seed, SEED_WINDOW, epoch, uidx, w])
            win_items, win_times = sample_training_window(
                u.train_items, u.train_times, n, rng)
            inputs, labels = apply_cloze_mask(
                win_items, model_cfg.mask_prob, mask_token, rng)
            rows.append((inputs, win_times, labels))
        if settings.last_target_windows and len(u.train_items) >= 2:
            v, t = build_eval_instance(
                u.train_items[:-1], u.train_times[:-1],
                int(u.train_times[-1]), n, mask_token)
            labels = np.zeros(n, dtype=np.int64)
            labels[-1] = u.train_items[-1]
            rows.append((v, t, labels))
    items = np.stack([r[0] for r in rows])
    times = np.stack([r[1] for r in rows])
    labels = np.stack([r[2] for r in rows])
    return items, times, labels


def train(model_cfg: ModelConfig, settings: TrainSettings, split: SplitDataset,
          seed: int = 0, log_fn=None) -> TrainResult:
    """Minimize the masked-prediction loss; return the best-validation model.

    After each epoch the model is scored on validation NDCG@10; training
    stops when it fails to improve for ``patience`` consecutive epochs.
    The returned model carries the parameters of the best epoch. Numerical
    divergence raises with the failing epoch index.
    """
    model = TemporalMixtureModel(
        model_cfg, np.random.default_rng([seed, SEED_INIT]))
    optimizer = Adam(model.parameters(), lr=settings.lr,
                     weight_decay=settings.weight_decay)
    state = TrainState()
    best_state = model.state_dict()
    log_lines: list[str] = []
    epochs_run = 0

    for epoch in range(settings.max_epochs):
        state.epoch = epoch
        started = time.perf_counter()
        items, times, labels = epoch_instances(split, model_cfg, settings,
                                               seed, epoch)
        order = np.random.default_rng(
            [seed, SEED_SHUFFLE, epoch]).permutation(len(items))
        total_nll = 0.0
        total_masked = 0
        for b, start in enumerate(range(0, len(order), settings.batch_size)):
            sel = order[start:start + settings.batch_size]
            drop_rng = np.random.default_rng([seed, SEED_DROPOUT, epoch, b])
            try:
                with Tape() as tape:
                    probs, _ = model.forward(items[sel], times[sel],
                                             training=True, rng=drop_rng)
                    loss = cloze_loss(probs, labels[sel])
                model.zero_grad()
                backward(loss, tape)
            except FloatingPointError as exc:
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: {exc}") from exc
            model.freeze_pad_row()
            optimizer.step()
            n_masked = int((labels[sel] != PAD).sum())
            total_nll += float(loss.data) * n_masked
            total_masked += n_masked

        train_loss = total_nll / total_masked
        try:
            report = evaluate(model, split, which="val", seed=seed,
                              k_values=(10,),
                              num_negatives=settings.num_negatives,
                              batch_size=settings.eval_batch_size)
        except FloatingPointError as exc:
            raise RuntimeError(
                f"training diverged at epoch {epoch}: {exc}") from exc
        val_ndcg = report.metrics[("ndcg", 10)]
        seconds = time.perf_counter() - started
        line = f"{epoch},{train_loss:.6f},{val_ndcg:.6f},{seconds:.3f}"
        log_lines.append(line)
        if log_fn is not None:
            log_fn(line)
        epochs_run = epoch + 1

        if state.record(val_ndcg):
            best_state = model.state_dict()
        if state.epochs_since_improvement >= settings.patience:
            break

    final_state = model.state_dict()
    model.load_state(best_state)
    return TrainResult(model=model, best_state=best_state,
                       best_metric=state.best_metric,
                       best_epoch=state.best_epoch,
                       final_state=final_state,
                       log_lines=log_lines, epochs_run=epochs_run)
