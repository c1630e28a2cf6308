"""Positional and temporal embeddings for the attention heads.

Six kinds, identified by the strings "con", "day", "pos" (absolute, one
vector per sequence position) and "sin", "exp", "log" (relative, one
vector per position pair, derived from the pairwise time-difference
matrix). Relative kernels are fixed functions of the differences; the
absolute kinds read learnable tables.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor, broadcast_to, embedding

SECONDS_PER_DAY = 86400

ABSOLUTE_KINDS = ("con", "day", "pos")
RELATIVE_KINDS = ("sin", "exp", "log")
ALL_KINDS = ABSOLUTE_KINDS + RELATIVE_KINDS

# canonical display order for combination identifiers
_KIND_RANK = {k: i for i, k in enumerate(ALL_KINDS)}


def canonical_combo(kinds) -> str:
    """Stable '+'-joined identifier, ordered con<day<pos<sin<exp<log."""
    return "+".join(sorted(kinds, key=lambda k: _KIND_RANK[k]))


def time_difference_matrix(times: np.ndarray, tau: float) -> np.ndarray:
    """Pairwise differences d[a, b] = (t_a - t_b) / tau over the last axis.

    ``times`` is integer seconds, shape (..., N); the subtraction happens in
    integer space so a constant shift of all timestamps cancels exactly.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    t = np.asarray(times, dtype=np.int64)
    diff = t[..., :, None] - t[..., None, :]
    return diff.astype(np.float64) / float(tau)


def _kernel_scales(width: int, freq: float, step: int) -> np.ndarray:
    # denominators freq^(step*c/width) for c = 0, step, 2*step, ...
    c = np.arange(0, width, step, dtype=np.float64)
    return freq ** (c / width)


def sin_encoding(d: np.ndarray, width: int, freq: float) -> np.ndarray:
    """Interleaved sin/cos of d at geometrically spaced frequencies.

    Component 2c is sin(d / freq^(2c/width)), component 2c+1 is the cosine
    at the same frequency. ``width`` must be even.
    """
    if width % 2 != 0:
        raise ValueError("sin encoding width must be even")
    scales = _kernel_scales(width, freq, step=2)
    ang = np.asarray(d, dtype=np.float64)[..., None] / scales
    out = np.empty(ang.shape[:-1] + (width,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def exp_encoding(d: np.ndarray, width: int, freq: float) -> np.ndarray:
    """Component c is exp(-|d| / freq^(c/width)); decays with the gap size."""
    scales = _kernel_scales(width, freq, step=1)
    return np.exp(-np.abs(np.asarray(d, dtype=np.float64))[..., None] / scales)


def log_encoding(d: np.ndarray, width: int, freq: float) -> np.ndarray:
    """Component c is log(1 + |d| / freq^(c/width)), natural log."""
    scales = _kernel_scales(width, freq, step=1)
    return np.log1p(np.abs(np.asarray(d, dtype=np.float64))[..., None] / scales)


_RELATIVE_ENCODERS = {"sin": sin_encoding, "exp": exp_encoding, "log": log_encoding}


def relative_encoding(kind: str, times: np.ndarray, width: int,
                      tau: float, freq: float) -> Tensor:
    """Constant (..., N, N, width) tensor for one relative kind."""
    d = time_difference_matrix(times, tau)
    return Tensor(_RELATIVE_ENCODERS[kind](d, width, freq))


def day_indices(times: np.ndarray, t_min: int, num_days: int) -> np.ndarray:
    """Calendar-day bucket per timestamp, clamped into [0, num_days).

    Clamping (rather than erroring) covers inference-time timestamps that
    fall outside the span seen during preprocessing.
    """
    t = np.asarray(times, dtype=np.int64)
    idx = (t - int(t_min)) // SECONDS_PER_DAY
    return np.clip(idx, 0, num_days - 1)


def day_embedding(times: np.ndarray, table: Parameter,
                  t_min: int, num_days: int) -> Tensor:
    """Per-position day-bucket rows of the learnable day table."""
    return embedding(table.value, day_indices(times, t_min, num_days))


def position_embedding(seq_len: int, table: Parameter) -> Tensor:
    """Rows 0..seq_len-1 of the learnable position table; timestamps ignored."""
    if seq_len > table.shape[0]:
        raise ValueError("sequence longer than the position table")
    return embedding(table.value, np.arange(seq_len))


def constant_embedding(seq_len: int, vector: Parameter) -> Tensor:
    """One shared learnable vector repeated for every position."""
    width = vector.shape[-1]
    return broadcast_to(vector.value, (seq_len, width))
