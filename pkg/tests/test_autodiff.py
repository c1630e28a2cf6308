import math

import numpy as np
import pytest

from seqrec.autodiff import (Parameter, Tape, add, backward,
                             broadcast_to, concat_last, constant, dot_pairs,
                             dropout, embedding, gather_last, gelu, log,
                             layer_norm, matmul, mul, reshape, scale,
                             softmax_masked, sub, sum_all, transpose_last2,
                             zero_gradients)
from seqrec.gradcheck import finite_difference_check


def test_gelu_origin_and_unit():
    out = gelu(constant([0.0, 1.0, -10.0]))
    assert out.data[0] == 0.0
    # x * Phi(x) at x=1, Phi from the error function
    assert out.data[1] == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), abs=1e-12)
    assert out.data[1] == pytest.approx(0.841345, abs=1e-6)
    assert abs(out.data[2]) < 1e-8


def test_gelu_monotone_on_nonnegative_half_line():
    xs = np.linspace(0.0, 5.0, 400)
    ys = gelu(constant(xs)).data
    assert np.all(np.diff(ys) >= 0)


def test_softmax_uniform_and_shift_invariance():
    p = softmax_masked(constant([0.0, 0.0, 0.0]))
    assert np.allclose(p.data, 1 / 3, atol=1e-15)
    a = softmax_masked(constant([1.0, 2.0])).data
    b = softmax_masked(constant([11.0, 12.0])).data
    assert np.array_equal(a, b)


def test_softmax_mask_forces_exact_zero():
    p = softmax_masked(constant([0.0, 0.0]), np.array([False, True]))
    assert p.data[0] == 1.0 and p.data[1] == 0.0


def test_softmax_all_masked_row_errors():
    with pytest.raises(ValueError, match="empty attention row"):
        softmax_masked(constant([[1.0, 2.0]]), np.array([[True, True]]))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    logits = constant(rng.normal(size=(50, 17)) * 20)
    mask = rng.random((50, 17)) < 0.3
    mask[:, 0] = False  # keep every row alive
    p = softmax_masked(logits, mask)
    assert np.all(np.abs(p.data.sum(axis=-1) - 1.0) <= 1e-12)
    assert np.all(p.data[mask] == 0.0)


def test_layer_norm_constant_row_and_exact_case():
    g1 = constant(np.ones(3))
    b0 = constant(np.zeros(3))
    out = layer_norm(constant([[5.0, 5.0, 5.0]]), g1, b0)
    assert np.allclose(out.data, 0.0)
    # mean 2, population std 1
    out = layer_norm(constant([[1.0, 3.0]]), constant(np.ones(2)),
                     constant(np.zeros(2)), eps=0.0)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-12)


def test_layer_norm_zero_gain_gives_offset():
    off = constant([0.5, -0.25])
    out = layer_norm(constant([[1.0, 9.0], [3.0, 4.0]]),
                     constant(np.zeros(2)), off)
    assert np.allclose(out.data, np.broadcast_to(off.data, (2, 2)))


def test_layer_norm_statistics_property():
    rng = np.random.default_rng(1)
    x = constant(rng.normal(size=(30, 16)) * 3 + 2)
    out = layer_norm(x, constant(np.ones(16)), constant(np.zeros(16)),
                     eps=1e-12).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-10)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-8)


def test_backward_sum_gives_ones():
    x = Parameter("x", np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        loss = sum_all(x.value)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_dot_gives_other_operand():
    xv = np.array([1.0, -2.0, 3.0])
    yv = np.array([0.5, 4.0, -1.0])
    x, y = Parameter("x", xv), Parameter("y", yv)
    with Tape() as tape:
        loss = sum_all(mul(x.value, y.value))
    backward(loss, tape)
    assert np.array_equal(x.grad, yv)
    assert np.array_equal(y.grad, xv)


def test_backward_requires_scalar_loss():
    x = Parameter("x", np.ones(3))
    with Tape() as tape:
        out = mul(x.value, x.value)
    with pytest.raises(ValueError, match="scalar"):
        backward(out, tape)


def test_tape_records_in_execution_order():
    a = Parameter("a", np.ones(2))
    with Tape() as tape:
        b = add(a.value, a.value)
        c = mul(b, b)
        d = sum_all(c)
    outputs = [rec[1] for rec in tape.records]
    assert outputs == [b, c, d]


def test_gradient_accumulates_over_reuse_and_calls():
    x = Parameter("x", np.array([1.0, 2.0]))
    with Tape() as tape:
        loss = sum_all(mul(x.value, x.value))
    backward(loss, tape)
    assert np.allclose(x.grad, 2 * x.value.data)
    backward(loss, tape)  # second replay accumulates
    assert np.allclose(x.grad, 4 * x.value.data)
    zero_gradients([x])
    assert np.all(x.grad == 0.0)


def test_no_tape_means_no_recording():
    x = Parameter("x", np.ones(3))
    out = gelu(mul(x.value, x.value))
    assert out.data.shape == (3,)
    assert Tape.current() is None


def test_ops_do_not_mutate_inputs():
    arr = np.array([1.0, 2.0, 3.0])
    t = constant(arr.copy())
    gelu(t)
    softmax_masked(t)
    scale(t, 3.0)
    assert np.array_equal(t.data, arr)


def test_nonfinite_outputs_are_errors():
    with pytest.raises(FloatingPointError):
        log(constant([0.0]))
    big = constant([1e308])
    with pytest.raises(FloatingPointError):
        add(big, big)


def test_embedding_index_checks():
    table = constant(np.arange(12.0).reshape(4, 3))
    out = embedding(table, np.array([[0, 3], [1, 1]]))
    assert out.shape == (2, 2, 3)
    with pytest.raises(IndexError):
        embedding(table, np.array([4]))
    with pytest.raises(IndexError):
        embedding(table, np.array([-1]))


def test_matmul_2d_weight_path_matches_numpy():
    rng = np.random.default_rng(2)
    a = constant(rng.normal(size=(3, 4, 5)))
    w = constant(rng.normal(size=(5, 2)))
    out = matmul(a, w)
    assert np.allclose(out.data, a.data @ w.data)


def test_dropout_inverted_scaling():
    rng = np.random.default_rng(3)
    x = constant(np.ones((200, 50)))
    out = dropout(x, 0.25, rng)
    vals = np.unique(out.data)
    assert set(np.round(vals, 12)) == {0.0, round(1 / 0.75, 12)}
    # kept mass is unbiased on average
    assert out.data.mean() == pytest.approx(1.0, abs=0.02)


def _fd(params, fn, tol):
    report = finite_difference_check(fn, params)
    worst = max(report.values())
    assert worst < tol, report


def test_composite_graphs_match_finite_differences():
    # every op the model uses, composed in small random graphs
    rng = np.random.default_rng(7)
    w1 = Parameter("w1", rng.uniform(-1, 1, size=(4, 6)))
    w2 = Parameter("w2", rng.uniform(-1, 1, size=(6, 3)))
    bias = Parameter("bias", rng.uniform(-1, 1, size=3))
    table = Parameter("table", rng.uniform(-1, 1, size=(5, 4)))
    gains = Parameter("gains", rng.uniform(0.5, 1.5, size=6))
    pair = Parameter("pair", rng.uniform(-1, 1, size=(2, 3, 3, 4)))
    vec = Parameter("vec", rng.uniform(-1, 1, size=(1, 4)))
    idx = np.array([[0, 2, 4], [1, 1, 3]])
    mask = np.array([[False, True, False], [False, False, True]])[:, None, :]

    def fn():
        x = embedding(table.value, idx)              # (2,3,4)
        x = add(x, broadcast_to(vec.value, (3, 4)))  # broadcast add
        h = matmul(x, w1.value)                      # (2,3,6)
        h = layer_norm(h, gains.value, constant(np.zeros(6)))
        h = gelu(h)
        logits = matmul(h, transpose_last2(h))       # (2,3,3)
        logits = add(logits, dot_pairs(x, pair.value))
        probs = softmax_masked(scale(logits, 0.5), mask)
        o = matmul(probs, matmul(h, w2.value))       # (2,3,3)
        o = add(o, bias.value)
        picked = gather_last(o, np.array([[0, 1, 2], [2, 0, 1]]))
        joined = concat_last([o, reshape(picked, (2, 3, 1))])
        return sum_all(mul(sub(joined, scale(joined, 0.25)), joined))

    _fd([w1, w2, bias, table, gains, pair, vec], fn, 1e-5)


def test_three_op_graph_matches_finite_differences_tightly():
    rng = np.random.default_rng(11)
    x = Parameter("x", rng.uniform(-1, 1, size=(3, 4)))
    y = Parameter("y", rng.uniform(-1, 1, size=(4, 2)))

    def fn():
        return sum_all(gelu(matmul(x.value, y.value)))

    _fd([x, y], fn, 1e-6)


def test_parameter_gradient_shape_matches_value():
    p = Parameter("p", np.zeros((3, 5)))
    assert p.grad.shape == p.value.data.shape
    with Tape() as tape:
        loss = sum_all(mul(p.value, p.value))
    backward(loss, tape)
    assert p.grad.shape == p.value.data.shape
