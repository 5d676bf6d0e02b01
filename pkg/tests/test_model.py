import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordered_steps.core import StepComponentMatrix
from ordered_steps.model import (
    ComponentClassifierBank,
    OptimizerState,
    adam_step,
    batch_loss_and_grad,
    compose_step_scores,
    dropout_mask,
    forward_components,
    gradient_step,
    loss_term_table,
    softmax,
    step_cross_entropy,
    step_scores,
    weighted_loss_grad,
)


def random_A(rng, K, M):
    A = (rng.random((K, M)) < 0.5).astype(int)
    A[np.arange(K), rng.integers(0, M, K)] = 1
    return StepComponentMatrix(A)


def random_bank(rng, M, D, scale=1.0):
    return ComponentClassifierBank(rng.normal(0, scale, (M, D)), rng.normal(0, scale, M), 0.0)


def test_forward_examples():
    bank = ComponentClassifierBank.zeros(3, 4)
    assert np.array_equal(forward_components(bank, np.ones(4)), np.zeros(3))
    W = np.arange(12.0).reshape(3, 4)
    bank = ComponentClassifierBank(W, np.zeros(3), 0.0)
    np.testing.assert_array_equal(forward_components(bank, np.eye(4)[2]), W[:, 2])
    with pytest.raises(ValueError):
        forward_components(bank, np.ones(5))


def test_forward_matches_naive_loops():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M, D = rng.integers(1, 6, 2)
        bank = random_bank(rng, M, D)
        x = rng.normal(size=D)
        ref = [bank.biases[m] + sum(bank.weights[m, d] * x[d] for d in range(D)) for m in range(M)]
        np.testing.assert_allclose(forward_components(bank, x), ref, rtol=0, atol=1e-12)


def test_inverted_dropout():
    m = dropout_mask((20000,), 0.5, 3)
    assert set(np.unique(m)) == {0.0, 2.0}
    assert abs(m.mean() - 1.0) < 0.05
    assert np.array_equal(dropout_mask((5,), 0.5, 3), dropout_mask((5,), 0.5, 3))
    bank = ComponentClassifierBank(np.ones((2, 3)), np.zeros(2), 0.5)
    x = np.ones(3)
    a = forward_components(bank, x, training=False)
    b = forward_components(bank, x, training=False)
    assert np.array_equal(a, b) and np.array_equal(a, [3.0, 3.0])


def test_compose_examples():
    assert compose_step_scores([0.2, 9.9, 0.4], [[1, 0, 1]])[0] == pytest.approx(0.3, abs=1e-15)
    g = np.array([1.5, -2.0, 7.0])
    assert compose_step_scores(g, [[0, 1, 0]])[0] == -2.0
    with pytest.raises(ValueError):
        compose_step_scores(g, [[0, 0, 0]])


def test_sharing_locality():
    rng = np.random.default_rng(5)
    A = random_A(rng, 4, 6)
    bank = random_bank(rng, 6, 3)
    x = rng.normal(size=(1, 3))
    base = step_scores(bank, A, x)[0]
    for m in range(6):
        W = bank.weights.copy()
        W[m] += 1.0
        moved = step_scores(ComponentClassifierBank(W, bank.biases, 0.0), A, x)[0]
        changed = ~np.isclose(moved, base, rtol=0, atol=1e-12)
        assert np.array_equal(changed, A.entries[:, m].astype(bool))


def test_cross_entropy_examples():
    loss, g = step_cross_entropy(np.zeros(2), 0)
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    np.testing.assert_allclose(g, [-0.5, 0.5])
    loss, _ = step_cross_entropy(np.array([30.0, -30.0]), 0)
    assert abs(loss) < 1e-9
    with pytest.raises(IndexError):
        step_cross_entropy(np.zeros(3), 3)
    with pytest.raises(ValueError):
        step_cross_entropy(np.array([np.inf, 0.0]), 0)


def test_cross_entropy_gradient_fd():
    rng = np.random.default_rng(1)
    for _ in range(20):
        f = rng.normal(size=5) * 3
        k = int(rng.integers(0, 5))
        _, g = step_cross_entropy(f, k)
        h = 1e-6
        fd = np.array([(step_cross_entropy(f + h * e, k)[0] - step_cross_entropy(f - h * e, k)[0]) / (2 * h) for e in np.eye(5)])
        assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-700, 700, allow_nan=False), min_size=1, max_size=12))
def test_softmax_normalized(f):
    assert abs(softmax(np.array(f)).sum() - 1.0) < 1e-12


def _batch_fd(bank, A_by_task, batch, h=1e-6):
    dW = np.zeros_like(bank.weights)
    db = np.zeros_like(bank.biases)
    for arr, out in ((bank.weights, dW), (bank.biases, db)):
        for idx in np.ndindex(arr.shape):
            vals = []
            for sgn in (1, -1):
                W, b = bank.weights.copy(), bank.biases.copy()
                (W if arr is bank.weights else b)[idx] += sgn * h
                vals.append(batch_loss_and_grad(ComponentClassifierBank(W, b, 0.0), A_by_task, batch)[0])
            out[idx] = (vals[0] - vals[1]) / (2 * h)
    return dW, db


def _rel(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_batch_gradient_fd_small():
    rng = np.random.default_rng(2)
    M, D = 4, 3
    A = random_A(rng, 2, M)
    bank = random_bank(rng, M, D)
    batch = [(rng.normal(size=D), "t", int(rng.integers(0, 2))) for _ in range(5)]
    _, grad = batch_loss_and_grad(bank, {"t": A}, batch)
    assert _rel(grad, _batch_fd(bank, {"t": A}, batch)) < 1e-4


def test_batch_zero_bank_and_consistency():
    rng = np.random.default_rng(3)
    A2, A3 = random_A(rng, 2, 5), random_A(rng, 3, 5)
    bank = ComponentClassifierBank.zeros(5, 4, 0.0)
    batch = [(rng.normal(size=4), "a", 1), (rng.normal(size=4), "b", 2)]
    loss, _ = batch_loss_and_grad(bank, {"a": A2, "b": A3}, batch)
    assert loss == pytest.approx((math.log(2) + math.log(3)) / 2, abs=1e-15)

    bank = random_bank(rng, 5, 4)
    x = rng.normal(size=4)
    loss, (dW, db) = batch_loss_and_grad(bank, {"b": A3}, [(x, "b", 1)])
    f = step_scores(bank, A3, x[None])[0]
    ref_loss, df = step_cross_entropy(f, 1)
    assert loss == pytest.approx(ref_loss, abs=1e-12)
    r = A3.averaging.T @ df
    np.testing.assert_allclose(dW, np.outer(r, x), atol=1e-12)
    np.testing.assert_allclose(db, r, atol=1e-12)
    with pytest.raises(ValueError):
        batch_loss_and_grad(bank, {"b": A3}, [])


def test_loss_table_zero_and_rows():
    rng = np.random.default_rng(4)
    A = random_A(rng, 3, 4)
    X = rng.normal(size=(6, 2))
    F = loss_term_table(ComponentClassifierBank.zeros(4, 2), A, X)
    np.testing.assert_allclose(F, math.log(3), atol=1e-15)
    bank = random_bank(rng, 4, 2)
    F = loss_term_table(bank, A, X)
    f = step_scores(bank, A, X)
    for t in range(6):
        np.testing.assert_allclose(F[t], [step_cross_entropy(f[t], k)[0] for k in range(3)], atol=1e-12)
    assert (F >= 0).all()


def test_grad_norms_match_finite_differences():
    rng = np.random.default_rng(6)
    M, D, K = 5, 3, 3
    A = random_A(rng, K, M)
    bank = random_bank(rng, M, D)
    X = rng.normal(size=(4, D))
    _, norms = loss_term_table(bank, A, X, with_grad_norms=True)
    for t, k in [(0, 0), (2, 1), (3, 2)]:
        fd = _batch_fd(bank, {"t": A}, [(X[t], "t", k)])
        ref = sum(float(np.sum(g * g)) for g in fd)
        assert abs(norms[t, k] - ref) / ref < 1e-3


def test_weighted_grad_matches_batch_sum():
    rng = np.random.default_rng(7)
    A = random_A(rng, 3, 4)
    bank = random_bank(rng, 4, 3)
    X = rng.normal(size=(8, 3))
    Y = np.zeros((8, 3))
    Y[[1, 4, 6], [0, 1, 2]] = 1
    dW, db = weighted_loss_grad(bank, A, X, Y)
    _, (bW, bb) = batch_loss_and_grad(bank, {"t": A}, [(X[t], "t", k) for t, k in zip(*np.nonzero(Y))])
    np.testing.assert_allclose(dW, 3 * bW, atol=1e-12)
    np.testing.assert_allclose(db, 3 * bb, atol=1e-12)


def test_adam_examples():
    rng = np.random.default_rng(8)
    bank = random_bank(rng, 3, 2)
    state = OptimizerState.fresh(bank, 1e-3)
    zero = (np.zeros((3, 2)), np.zeros(3))
    nb, ns = adam_step(bank, zero, state)
    assert np.array_equal(nb.weights, bank.weights) and np.array_equal(nb.biases, bank.biases)
    assert ns.step_count == 1

    g = (rng.normal(size=(3, 2)), rng.normal(size=3))
    nb, ns = adam_step(bank, g, state)
    np.testing.assert_allclose(nb.weights - bank.weights, -1e-3 * np.sign(g[0]), atol=1e-8)
    np.testing.assert_allclose(nb.biases - bank.biases, -1e-3 * np.sign(g[1]), atol=1e-8)

    nb2, ns2 = adam_step(nb, g, ns)
    assert (ns2.second_moment[0] >= ns.second_moment[0]).all()
    step1 = np.abs(nb.weights - bank.weights)
    step2 = np.abs(nb2.weights - nb.weights)
    assert (step2 <= step1 + 1e-15).all()

    with pytest.raises(ValueError):
        adam_step(bank, (np.full((3, 2), np.nan), np.zeros(3)), state)
    with pytest.raises(ValueError):
        adam_step(bank, (np.zeros((2, 2)), np.zeros(3)), state)


def test_adam_matches_direct_recomputation():
    rng = np.random.default_rng(9)
    bank = random_bank(rng, 2, 2)
    state = OptimizerState.fresh(bank, 0.01)
    w = bank.weights.copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for step in range(1, 6):
        g = rng.normal(size=(2, 2))
        bank, state = adam_step(bank, (g, np.zeros(2)), state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-8)
        np.testing.assert_allclose(bank.weights, w, rtol=0, atol=1e-15)


def test_gradient_step_and_bank_validation():
    bank = ComponentClassifierBank(np.ones((2, 2)), np.ones(2), 0.0)
    nb = gradient_step(bank, (np.ones((2, 2)), np.ones(2)), 0.5)
    assert np.array_equal(nb.weights, np.full((2, 2), 0.5))
    with pytest.raises(ValueError):
        gradient_step(bank, (np.full((2, 2), np.inf), np.ones(2)), 0.5)
    with pytest.raises(ValueError):
        ComponentClassifierBank(np.ones((2, 2)), np.ones(3))
    with pytest.raises(ValueError):
        ComponentClassifierBank(np.ones((2, 2)), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        OptimizerState.fresh(bank, 0.0)
