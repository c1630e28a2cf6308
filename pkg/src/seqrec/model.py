"""Bidirectional self-attention recommender with per-head temporal embeddings.

Each attention head consumes one embedding kind. Relative heads ("sin",
"exp", "log") follow the Transformer-XL decomposition: content and
positional logits are separated, with global bias vectors added to the
query on each path, and positional information never enters the value
path. Absolute heads ("con", "day", "pos") keep the same separation but
score position against position through their own projections:

    relative:  logit(a,b) = <q_a + u, k_b> + <q_a + w, r_ab>
    absolute:  logit(a,b) = <q_a, k_b> + <Q_A e_a, K_A e_b>

Layers are pre-normalized residual blocks (LayerNorm before each sublayer,
none at the end), and the prediction head reuses the item-embedding rows
as output weights.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import truncnorm

from . import temporal
from .autodiff import (Parameter, Tensor, add, concat_last, constant,
                       dot_pairs, dropout, embedding, gather_last, gelu, log,
                       matmul, mul, reshape, scale, softmax_masked, sum_all,
                       layer_norm, transpose_last2)
from .data import PAD
from .temporal import ALL_KINDS, RELATIVE_KINDS

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters; serializable into checkpoints."""
    num_items: int
    hidden: int = 64
    num_layers: int = 2
    head_kinds: tuple[str, ...] = ("day", "pos", "sin", "log")
    max_len: int = 50
    dropout: float = 0.2
    mask_prob: float = 0.2
    tau: float = 86400.0
    freq: float = 10000.0
    num_days: int = 1
    t_min: int = 0
    output_bias: bool = True
    precision: str = "f64"

    def __post_init__(self):
        object.__setattr__(self, "head_kinds", tuple(self.head_kinds))
        if self.num_items < 1:
            raise ValueError("num_items must be >= 1")
        if not self.head_kinds:
            raise ValueError("at least one attention head is required")
        for kind in self.head_kinds:
            if kind not in ALL_KINDS:
                raise ValueError(f"unknown embedding kind {kind!r}")
        if self.hidden % len(self.head_kinds) != 0:
            raise ValueError(
                f"hidden size {self.hidden} not divisible by "
                f"{len(self.head_kinds)} heads")
        if "sin" in self.head_kinds and self.head_dim % 2 != 0:
            raise ValueError("sin heads need an even head dimension")
        if not 0.0 < self.mask_prob <= 1.0:
            raise ValueError("mask probability must be in (0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.tau <= 0 or self.freq <= 0:
            raise ValueError("tau and freq must be positive")
        if self.num_days < 1 or self.max_len < 1 or self.num_layers < 1:
            raise ValueError("num_days, max_len and num_layers must be >= 1")
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be 'f64' or 'f32'")

    @property
    def head_dim(self) -> int:
        return self.hidden // len(self.head_kinds)

    @property
    def mask_token(self) -> int:
        return self.num_items + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_kinds"] = list(self.head_kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["head_kinds"] = tuple(d["head_kinds"])
        return cls(**d)


class HeadParams:
    """Projections of one attention head (content plus its positional side)."""

    def __init__(self, prefix: str, kind: str, hidden: int, head_dim: int,
                 init, dtype):
        self.kind = kind
        self.q_item = Parameter(f"{prefix}.q_item", init((hidden, head_dim)), dtype)
        self.k_item = Parameter(f"{prefix}.k_item", init((hidden, head_dim)), dtype)
        self.v_item = Parameter(f"{prefix}.v_item", init((hidden, head_dim)), dtype)
        if kind in RELATIVE_KINDS:
            self.k_rel = Parameter(f"{prefix}.k_rel", init((head_dim, head_dim)), dtype)
            self.bias_item = Parameter(f"{prefix}.bias_item", np.zeros(head_dim), dtype)
            self.bias_rel = Parameter(f"{prefix}.bias_rel", np.zeros(head_dim), dtype)
        else:
            self.q_pos = Parameter(f"{prefix}.q_pos", init((head_dim, head_dim)), dtype)
            self.k_pos = Parameter(f"{prefix}.k_pos", init((head_dim, head_dim)), dtype)

    def parameters(self):
        out = [self.q_item, self.k_item, self.v_item]
        if self.kind in RELATIVE_KINDS:
            out += [self.k_rel, self.bias_item, self.bias_rel]
        else:
            out += [self.q_pos, self.k_pos]
        return out


class LayerParams:
    def __init__(self, prefix: str, kinds, hidden: int, head_dim: int,
                 init, dtype):
        self.ln1_gain = Parameter(f"{prefix}.ln1_gain", np.ones(hidden), dtype)
        self.ln1_offset = Parameter(f"{prefix}.ln1_offset", np.zeros(hidden), dtype)
        self.heads = [HeadParams(f"{prefix}.head{i}", kind, hidden, head_dim,
                                 init, dtype)
                      for i, kind in enumerate(kinds)]
        self.attn_out = Parameter(f"{prefix}.attn_out", init((hidden, hidden)), dtype)
        self.ln2_gain = Parameter(f"{prefix}.ln2_gain", np.ones(hidden), dtype)
        self.ln2_offset = Parameter(f"{prefix}.ln2_offset", np.zeros(hidden), dtype)
        self.ffn_w1 = Parameter(f"{prefix}.ffn_w1", init((hidden, 4 * hidden)), dtype)
        self.ffn_b1 = Parameter(f"{prefix}.ffn_b1", np.zeros(4 * hidden), dtype)
        self.ffn_w2 = Parameter(f"{prefix}.ffn_w2", init((4 * hidden, hidden)), dtype)
        self.ffn_b2 = Parameter(f"{prefix}.ffn_b2", np.zeros(hidden), dtype)

    def parameters(self):
        out = [self.ln1_gain, self.ln1_offset]
        for h in self.heads:
            out += h.parameters()
        out += [self.attn_out, self.ln2_gain, self.ln2_offset,
                self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2]
        return out


class TemporalMixtureModel:
    """The full network: item table, L mixture layers, tied prediction head."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.dtype = np.float64 if config.precision == "f64" else np.float32

        def init(shape):
            return truncnorm.rvs(-2.0, 2.0, scale=INIT_STD, size=shape,
                                 random_state=rng)

        c = config
        self.item_table = Parameter("item_table",
                                    init((c.num_items + 2, c.hidden)), self.dtype)
        self.item_table.value.data[PAD, :] = 0.0  # [PAD] row stays zero, frozen

        self.con_vector = self.day_table = self.pos_table = None
        kinds = set(c.head_kinds)
        if "con" in kinds:
            self.con_vector = Parameter("con_vector", init((1, c.head_dim)), self.dtype)
        if "day" in kinds:
            self.day_table = Parameter("day_table",
                                       init((c.num_days, c.head_dim)), self.dtype)
        if "pos" in kinds:
            self.pos_table = Parameter("pos_table",
                                       init((c.max_len, c.head_dim)), self.dtype)

        self.layers = [LayerParams(f"layer{l}", c.head_kinds, c.hidden,
                                   c.head_dim, init, self.dtype)
                       for l in range(c.num_layers)]

        self.pred_w = Parameter("pred_w", init((c.hidden, c.hidden)), self.dtype)
        self.pred_b = Parameter("pred_b", np.zeros(c.hidden), self.dtype)
        self.out_bias = None
        if c.output_bias:
            self.out_bias = Parameter("out_bias", np.zeros(c.num_items), self.dtype)

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> list[Parameter]:
        out = [self.item_table]
        for p in (self.con_vector, self.day_table, self.pos_table):
            if p is not None:
                out.append(p)
        for layer in self.layers:
            out += layer.parameters()
        out += [self.pred_w, self.pred_b]
        if self.out_bias is not None:
            out.append(self.out_bias)
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze_pad_row(self) -> None:
        """Clear any gradient on the [PAD] embedding row; it never trains."""
        self.item_table.grad[PAD, :] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.data.copy() for p in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            arr = state[p.name]
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {p.name}: "
                                 f"{arr.shape} vs {p.shape}")
            p.value.data[...] = arr.astype(self.dtype)

    # -- forward --------------------------------------------------------------

    def temporal_embeddings(self, times: np.ndarray) -> dict[str, Tensor]:
        """One tensor per distinct head kind, computed once per batch."""
        c = self.config
        n = times.shape[-1]
        out: dict[str, Tensor] = {}
        for kind in set(c.head_kinds):
            if kind == "pos":
                out[kind] = temporal.position_embedding(n, self.pos_table)
            elif kind == "con":
                out[kind] = temporal.constant_embedding(n, self.con_vector)
            elif kind == "day":
                out[kind] = temporal.day_embedding(times, self.day_table,
                                                   c.t_min, c.num_days)
            else:
                enc = temporal.relative_encoding(kind, times, c.head_dim,
                                                 c.tau, c.freq)
                out[kind] = constant(enc.data.astype(self.dtype, copy=False))
        return out

    def _maybe_dropout(self, x: Tensor, training: bool, rng) -> Tensor:
        if training and self.config.dropout > 0.0:
            return dropout(x, self.config.dropout, rng)
        return x

    def _attention_head(self, head: HeadParams, x_norm: Tensor, emb: Tensor,
                        key_mask: np.ndarray, training: bool, rng) -> Tensor:
        q = matmul(x_norm, head.q_item.value)
        k = matmul(x_norm, head.k_item.value)
        v = matmul(x_norm, head.v_item.value)
        if head.kind in RELATIVE_KINDS:
            r = matmul(emb, head.k_rel.value)  # (B, N, N, head_dim)
            content = matmul(add(q, head.bias_item.value), transpose_last2(k))
            position = dot_pairs(add(q, head.bias_rel.value), r)
        else:
            content = matmul(q, transpose_last2(k))
            a_q = matmul(emb, head.q_pos.value)
            a_k = matmul(emb, head.k_pos.value)
            position = matmul(a_q, transpose_last2(a_k))
        logits = scale(add(content, position),
                       1.0 / math.sqrt(self.config.head_dim))
        probs = softmax_masked(logits, key_mask)
        probs = self._maybe_dropout(probs, training, rng)
        return matmul(probs, v)

    def _encoder_layer(self, layer: LayerParams, x: Tensor,
                       embs: dict[str, Tensor], key_mask: np.ndarray,
                       training: bool, rng) -> Tensor:
        xn = layer_norm(x, layer.ln1_gain.value, layer.ln1_offset.value)
        outs = [self._attention_head(h, xn, embs[h.kind], key_mask, training, rng)
                for h in layer.heads]
        attn = matmul(concat_last(outs), layer.attn_out.value)
        x = add(x, self._maybe_dropout(attn, training, rng))
        yn = layer_norm(x, layer.ln2_gain.value, layer.ln2_offset.value)
        ff = feed_forward(yn, layer.ffn_w1.value, layer.ffn_b1.value,
                          layer.ffn_w2.value, layer.ffn_b2.value)
        return add(x, self._maybe_dropout(ff, training, rng))

    def forward(self, items, times, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Score every catalog item at every position.

        ``items`` may contain [PAD] and [MASK] tokens; pad keys are masked
        out of every attention row. Returns (probabilities, logits), each
        (..., N, num_items); column j scores item index j+1.
        """
        c = self.config
        items = np.asarray(items, dtype=np.int64)
        times = np.asarray(times, dtype=np.int64)
        single = items.ndim == 1
        if single:
            items, times = items[None, :], times[None, :]
        if items.shape != times.shape:
            raise ValueError("items and times must have the same shape")
        if items.shape[-1] != c.max_len:
            raise ValueError(f"sequence length {items.shape[-1]} != "
                             f"model length {c.max_len}")
        if training and c.dropout > 0.0 and rng is None:
            raise ValueError("training forward with dropout needs an rng")

        key_mask = (items == PAD)[:, None, :]  # broadcast over the query axis
        embs = self.temporal_embeddings(times)
        x = embedding(self.item_table.value, items)
        for layer in self.layers:
            x = self._encoder_layer(layer, x, embs, key_mask, training, rng)

        hidden = gelu(add(matmul(x, self.pred_w.value), self.pred_b.value))
        item_rows = embedding(self.item_table.value,
                              np.arange(1, c.num_items + 1))
        logits = matmul(hidden, transpose_last2(item_rows))
        if self.out_bias is not None:
            logits = add(logits, self.out_bias.value)
        probs = softmax_masked(logits)
        if single:
            shp = (c.max_len, c.num_items)
            probs, logits = reshape(probs, shp), reshape(logits, shp)
        return probs, logits


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise GELU(x W1 + b1) W2 + b2 with inner width 4x hidden."""
    return add(matmul(gelu(add(matmul(x, w1), b1)), w2), b2)


def cloze_loss(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true item over masked positions.

    ``labels`` holds the original item index at masked positions and 0
    everywhere else; unmasked positions contribute exactly zero.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != probs.shape[:-1]:
        raise ValueError("labels shape must match probabilities minus last axis")
    masked = labels != PAD
    count = int(masked.sum())
    if count == 0:
        raise ValueError("batch has no masked positions")
    idx = np.where(masked, labels - 1, 0)
    mask_f = masked.astype(probs.data.dtype)
    picked = gather_last(probs, idx)
    # pin ignored positions to probability one so only masked slots reach the
    # log (a placeholder gather may legitimately underflow to zero)
    guarded = add(mul(picked, constant(mask_f)), constant(1.0 - mask_f))
    return scale(sum_all(log(guarded)), -1.0 / count)
