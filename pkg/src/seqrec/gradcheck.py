"""Central finite-difference verification of analytic gradients.

The relative error reported per entry is |analytic - numeric| divided by
max(|analytic|, |numeric|, 1), so near-zero gradients are judged on an
absolute scale instead of amplifying floating-point noise.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Parameter, Tape, Tensor, backward, zero_gradients


def _evaluate(model_fn: Callable[[], Tensor]) -> float:
    out = model_fn()
    if out.data.shape != ():
        raise ValueError("model_fn must return a scalar tensor")
    return float(out.data)


def analytic_gradients(model_fn: Callable[[], Tensor],
                       params: Sequence[Parameter]) -> dict[str, np.ndarray]:
    """Run one taped forward/backward pass and return gradients by name."""
    zero_gradients(params)
    with Tape() as tape:
        loss = model_fn()
    backward(loss, tape)
    grads = {p.name: p.grad.copy() for p in params}
    zero_gradients(params)
    return grads


def finite_difference_check(model_fn: Callable[[], Tensor],
                            params: Sequence[Parameter],
                            eps: float = 1e-5,
                            max_entries: int | None = None,
                            seed: int = 0,
                            analytic: Mapping[str, np.ndarray] | None = None,
                            ) -> dict[str, float]:
    """Compare analytic gradients against central differences, per parameter.

    ``model_fn`` must be deterministic given fixed inputs (dropout off);
    two baseline evaluations are compared bit-for-bit and a mismatch is an
    error. Each parameter entry i is probed as
    (f(theta + eps*e_i) - f(theta - eps*e_i)) / (2*eps); for tensors larger
    than ``max_entries`` a seeded subsample of entries is probed instead.
    Returns the max relative error per parameter name.
    """
    if _evaluate(model_fn) != _evaluate(model_fn):
        raise ValueError("model_fn is not deterministic")
    if analytic is None:
        analytic = analytic_gradients(model_fn, params)

    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for p in params:
        grad = np.asarray(analytic[p.name])
        flat = p.value.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            entries = rng.choice(n, size=max_entries, replace=False)
        else:
            entries = range(n)
        worst = 0.0
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = _evaluate(model_fn)
            flat[i] = orig - eps
            f_minus = _evaluate(model_fn)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = grad.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            if rel > worst:
                worst = rel
        report[p.name] = worst
    return report
