import numpy as np
import pytest

from seqrec.autodiff import Parameter, constant, gelu, matmul, mul, sum_all
from seqrec.gradcheck import analytic_gradients, finite_difference_check


def _linear_setup():
    rng = np.random.default_rng(5)
    coef = rng.uniform(0.2, 2.0, size=8)
    theta = Parameter("theta", rng.uniform(-1, 1, size=8))

    def fn():
        return sum_all(mul(theta.value, constant(coef)))

    return theta, fn


def test_linear_model_is_exact():
    theta, fn = _linear_setup()
    report = finite_difference_check(fn, [theta])
    assert report["theta"] < 1e-9


def test_corrupted_gradient_is_detected():
    theta, fn = _linear_setup()
    grads = analytic_gradients(fn, [theta])
    grads["theta"] = grads["theta"] + 0.1
    report = finite_difference_check(fn, [theta], analytic=grads)
    assert report["theta"] > 1e-2


def test_nondeterministic_model_fn_rejected():
    rng = np.random.default_rng(0)
    p = Parameter("p", np.ones(2))

    def fn():
        return sum_all(mul(p.value, constant(rng.normal(size=2))))

    with pytest.raises(ValueError, match="not deterministic"):
        finite_difference_check(fn, [p])


def test_nonlinear_graph_within_tolerance():
    rng = np.random.default_rng(9)
    a = Parameter("a", rng.uniform(-1, 1, size=(5, 3)))
    b = Parameter("b", rng.uniform(-1, 1, size=(3, 4)))

    def fn():
        return sum_all(gelu(matmul(a.value, b.value)))

    report = finite_difference_check(fn, [a, b])
    assert max(report.values()) < 1e-6


def test_subsampling_is_seeded_and_bounded():
    rng = np.random.default_rng(1)
    big = Parameter("big", rng.uniform(-1, 1, size=(20, 20)))

    def fn():
        return sum_all(gelu(big.value))

    r1 = finite_difference_check(fn, [big], max_entries=10, seed=3)
    r2 = finite_difference_check(fn, [big], max_entries=10, seed=3)
    assert r1 == r2
    assert r1["big"] < 1e-6


def test_non_scalar_model_fn_rejected():
    p = Parameter("p", np.ones(2))

    def fn():
        return mul(p.value, p.value)

    with pytest.raises(ValueError, match="scalar"):
        finite_difference_check(fn, [p])
