"""Dense float tensors with tape-based reverse-mode differentiation.

The op set covers exactly what the sequence model needs: broadcasting
arithmetic, matmul, embedding lookup, GELU, masked softmax, layer norm,
and a few shape utilities. Every op checks its output for NaN/Inf so a
numerical blowup fails at the op that produced it instead of corrupting
downstream state.

Tensors are immutable once produced by an op. Recording happens on an
explicit :class:`Tape` opened as a context manager; with no active tape,
ops run in a pure inference mode with zero bookkeeping.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float64

_FLOAT_DTYPES = (np.float32, np.float64)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """N-dimensional float array, row-major, produced by ops and never mutated."""

    __slots__ = ("data", "param")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.param = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data, dtype=None) -> Tensor:
    """Wrap raw values as a non-learnable tensor."""
    return Tensor(data, dtype=dtype)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


class Parameter:
    """Named learnable tensor with a persistent gradient buffer.

    The gradient always has the value's shape and is only ever changed by
    ``backward`` (which accumulates into it) or ``zero_grad``.
    """

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, data, dtype=None):
        self.name = name
        self.value = Tensor(data, dtype=dtype)
        # contiguity lets in-place perturbation (gradient checking) and the
        # optimizer treat the flat view as the storage itself
        self.value.data = np.ascontiguousarray(self.value.data)
        self.value.param = self
        self.grad = np.zeros_like(self.value.data)

    @property
    def shape(self):
        return self.value.data.shape

    @property
    def size(self):
        return self.value.data.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def zero_gradients(params) -> None:
    for p in params:
        p.zero_grad()


class Tape:
    """Ordered record of executed differentiable ops.

    Used as a context manager; ops executed inside the block append a
    record. ``backward`` replays the records in exact reverse execution
    order, visiting each exactly once.
    """

    _stack = threading.local()

    def __init__(self):
        self.records: list[tuple] = []

    def __enter__(self):
        stack = getattr(Tape._stack, "tapes", None)
        if stack is None:
            stack = Tape._stack.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._stack.tapes.pop()
        return False

    @classmethod
    def current(cls):
        stack = getattr(cls._stack, "tapes", None)
        return stack[-1] if stack else None

    def __len__(self):
        return len(self.records)


def _emit(name, out_data, inputs, backward_fn) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{name} produced non-finite values")
    out = Tensor(out_data)
    tape = Tape.current()
    if tape is not None:
        tape.records.append((inputs, out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit("add", out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data - b.data

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit("sub", out, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    ad, bd = a.data, b.data
    with np.errstate(over="ignore", invalid="ignore"):
        out = ad * bd

    def backward_fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit("mul", out, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar treated as a constant."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data * c
    return _emit("scale", out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics; both operands >= 2-d.

    A 2-d right operand (the common weight-matrix case) takes a flattened
    single-GEMM path in both directions.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

    if bd.ndim == 2:
        k, n = bd.shape
        with np.errstate(over="ignore", invalid="ignore"):
            out = (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (n,))

        def backward_fn(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, k).T @ g2
            return ga, gb

    else:
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.matmul(ad, bd)

        def backward_fn(g):
            ga = _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape)
            gb = _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape)
            return ga, gb

    return _emit("matmul", out, (a, b), backward_fn)


def transpose_last2(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ValueError("transpose_last2 needs at least 2 dimensions")
    return _emit("transpose", a.data.swapaxes(-1, -2), (a,),
                 lambda g: (g.swapaxes(-1, -2),))


def dot_pairs(x: Tensor, r: Tensor) -> Tensor:
    """Row-wise dot against a pairwise table: out[..., i, j] = x[..., i, :] . r[..., i, j, :].

    Shapes: x (..., N, d) with r (..., N, N, d) -> (..., N, N). Leading
    dims must match exactly.
    """
    xd, rd = x.data, r.data
    if xd.ndim + 1 != rd.ndim or xd.shape[:-1] != rd.shape[:-2] or xd.shape[-1] != rd.shape[-1]:
        raise ValueError(f"dot_pairs shape mismatch: {xd.shape} vs {rd.shape}")
    out = np.einsum("...id,...ijd->...ij", xd, rd, optimize=True)

    def backward_fn(g):
        gx = np.einsum("...ij,...ijd->...id", g, rd, optimize=True)
        gr = np.einsum("...ij,...id->...ijd", g, xd, optimize=True)
        return gx, gr

    return _emit("dot_pairs", out, (x, r), backward_fn)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    out = np.broadcast_to(a.data, shape)
    return _emit("broadcast_to", out, (a,),
                 lambda g: (_unbroadcast(g, a.data.shape),))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = a.data.reshape(shape)
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.data.shape),))


def concat_last(tensors) -> Tensor:
    """Concatenate along the last axis."""
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=-1)
    offsets = np.cumsum([t.data.shape[-1] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=-1))

    return _emit("concat_last", out, tuple(tensors), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum()

    def backward_fn(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _emit("sum_all", out, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    """Natural log; non-positive inputs surface as a non-finite-output error."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    ad = a.data

    def backward_fn(g):
        return (g / ad,)

    return _emit("log", out, (a,), backward_fn)


# ---------------------------------------------------------------------------
# lookups
# ---------------------------------------------------------------------------


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[indices[...], :]. Gradients scatter-add."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding index out of range [0, {table.data.shape[0]}): "
            f"got [{idx.min()}, {idx.max()}]")
    out = table.data[idx]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _emit("embedding", out, (table,), backward_fn)


def gather_last(x: Tensor, indices: np.ndarray) -> Tensor:
    """Pick one entry per row along the last axis: out[...] = x[..., indices[...]]."""
    idx = np.asarray(indices)
    if idx.shape != x.data.shape[:-1]:
        raise ValueError("gather_last index shape must match all but the last axis")
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx,)

    return _emit("gather_last", out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF (erf form)."""
    x = a.data
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        out = x * cdf

    def backward_fn(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _emit("gelu", out, (a,), backward_fn)


def softmax_masked(logits: Tensor, mask=None) -> Tensor:
    """Row softmax over the last axis; ``mask`` (boolean, True = excluded)
    forces probability exactly zero. Raises on a fully masked row.
    """
    x = logits.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if np.any(m.all(axis=-1)):
            raise ValueError("empty attention row")
        x = np.where(m, -np.inf, x)
    with np.errstate(invalid="ignore"):
        mx = x.max(axis=-1, keepdims=True)
        e = np.exp(x - mx)
        p = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        gl = p * (g - (g * p).sum(axis=-1, keepdims=True))
        return (gl,)

    return _emit("softmax", p, (logits,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gain & offset."""
    h = x.data.shape[-1]
    if gain.data.shape != (h,) or offset.data.shape != (h,):
        raise ValueError("gain/offset length must equal the last dimension")
    xd = x.data
    with np.errstate(over="ignore", invalid="ignore"):
        mu = xd.mean(axis=-1, keepdims=True)
        var = xd.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv
        out = xhat * gain.data + offset.data

    def backward_fn(g):
        dgain = (g * xhat).reshape(-1, h).sum(axis=0)
        doffset = g.reshape(-1, h).sum(axis=0)
        dxhat = g * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, doffset

    return _emit("layer_norm", out, (x, gain, offset), backward_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale kept by 1/(1-rate).

    Call only on the training path; inference simply skips the call.
    """
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    return mul(x, Tensor(keep / (1.0 - rate)))


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> None:
    """Fill Parameter gradients with d(loss)/d(parameter), accumulating over uses.

    Walks the tape in exact reverse execution order, each record once.
    Gradients of intermediate tensors are transient; leaf tensors owned by
    a Parameter accumulate (+=) into the parameter's persistent buffer.
    """
    if loss.data.shape != ():
        raise ValueError("loss must be a scalar tensor")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for inputs, output, backward_fn in reversed(tape.records):
        g = grads.pop(id(output), None)
        if g is None:
            continue
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is None:
                continue
            if t.param is not None:
                t.param.grad += gi
            else:
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
