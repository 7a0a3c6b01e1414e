import numpy as np
import pytest

from maxplusnn.autodiff import (
    BOTTOM_CLAMP,
    Tape,
    Tensor,
    TropicalParam,
    UndefinedOutputError,
    batchnorm,
    group_max,
    linear,
    maxplus,
    relu,
    sigmoid_bce,
    softmax_ce,
)


def numeric_grad(fn, arr, h=1e-6):
    """Central-difference gradient of a scalar function of one array."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        up = fn()
        arr[idx] = orig - h
        down = fn()
        arr[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def run_scalar(build):
    """Run build(tape) -> scalar Tensor, backprop, return the loss value."""
    tape = Tape()
    loss = build(tape)
    tape.backward(loss)
    return float(loss.data)


def test_tensor_rejects_nonfinite():
    with pytest.raises(ValueError):
        Tensor(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        Tensor(np.array([[np.inf, 0.0]]))


def test_backward_requires_scalar():
    tape = Tape()
    t = Tensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        tape.backward(t)


def test_linear_gradients_match_numeric():
    rng = np.random.default_rng(0)
    A = Tensor(rng.normal(size=(3, 4)))
    x = Tensor(rng.normal(size=(4, 2)))
    b = Tensor(rng.normal(size=3))
    w = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])

    def build(tape):
        out = linear(tape, A, x, b)
        return sigmoid_bce(tape, out, (w > 0).astype(float))

    run_scalar(build)
    analytic = {t: t.grad.copy() for t in (A, x, b)}
    for t in (A, x, b):
        num = numeric_grad(lambda: run_scalar(build), t.data)
        assert np.allclose(analytic[t], num, atol=1e-6)


def test_linear_mask_blocks_forward_and_grad():
    A = Tensor(np.array([[1.0, 5.0]]))
    x = Tensor(np.array([[2.0], [3.0]]))
    mask = np.array([[True, False]])
    tape = Tape()
    out = linear(tape, A, x, weight_mask=mask)
    assert out.data[0, 0] == pytest.approx(2.0)
    loss = sigmoid_bce(tape, out, np.ones((1, 1)))
    tape.backward(loss)
    assert A.grad[0, 1] == 0.0
    assert A.grad[0, 0] != 0.0


def brute_maxplus(values, active, bias_vals, bias_active, y):
    m, k = values.shape
    b = y.shape[1]
    out = np.empty((m, b))
    warg = np.full((m, b), -1)
    bias_won = np.zeros((m, b), dtype=bool)
    bottom = np.zeros((m, b), dtype=bool)
    for i in range(m):
        for j in range(b):
            best, best_k = -np.inf, -1
            for kk in range(k):
                if active[i, kk] and values[i, kk] + y[kk, j] > best:
                    best, best_k = values[i, kk] + y[kk, j], kk
            if bias_vals is not None and bias_active[i] and bias_vals[i] > best:
                out[i, j], bias_won[i, j] = bias_vals[i], True
            elif best_k >= 0:
                out[i, j], warg[i, j] = best, best_k
            else:
                bottom[i, j] = True
    return out, warg, bias_won, bottom


@pytest.mark.parametrize("shape", [(3, 5, 4), (6, 40, 8), (2, 2, 1)])
def test_maxplus_forward_matches_bruteforce(shape):
    m, k, b = shape
    rng = np.random.default_rng(m * 100 + k)
    for density in (1.0, 0.5, 0.1):
        active = rng.random((m, k)) < density
        values = rng.normal(size=(m, k)).round(2)
        W = TropicalParam(values, active)
        bvals = rng.normal(size=(m, 1)).round(2)
        bias = TropicalParam(bvals, np.ones((m, 1), dtype=bool))
        y = Tensor(rng.normal(size=(k, b)).round(2))
        out = maxplus(Tape(), W, bias, y)
        want, _, _, _ = brute_maxplus(values, active, bvals[:, 0],
                                      np.ones(m, dtype=bool), y.data)
        assert np.array_equal(out.data, want)


def test_maxplus_sparse_and_dense_paths_agree():
    # low-degree masks take a gather path; verify against an all-column scan
    rng = np.random.default_rng(11)
    m = k = 40
    values = rng.normal(size=(m, k))
    sparse_active = np.zeros((m, k), dtype=bool)
    for i in range(m):
        sparse_active[i, rng.choice(k, size=2, replace=False)] = True
    y = rng.normal(size=(k, 7))
    out = maxplus(Tape(), TropicalParam(values, sparse_active), None, Tensor(y),
                  allow_bottom=True)
    want, warg, _, _ = brute_maxplus(values, sparse_active, None, None, y)
    assert np.array_equal(out.data, want)


def test_maxplus_tie_breaks_to_lowest_column():
    W = TropicalParam(np.zeros((1, 3)), np.array([[False, True, True]]))
    y = Tensor(np.array([[5.0], [5.0], [5.0]]))
    tape = Tape()
    out = maxplus(tape, W, None, y)
    loss = sigmoid_bce(tape, out, np.zeros((1, 1)))
    tape.backward(loss)
    assert W.grad[0, 1] != 0.0 and W.grad[0, 2] == 0.0


def test_maxplus_bias_wins_only_strictly():
    W = TropicalParam(np.array([[0.0]]))
    bias_equal = TropicalParam(np.array([[3.0]]))
    y = Tensor(np.array([[3.0]]))
    tape = Tape()
    out = maxplus(tape, W, bias_equal, y)
    assert out.data[0, 0] == 3.0
    loss = sigmoid_bce(tape, out, np.ones((1, 1)))
    tape.backward(loss)
    # exact tie: the weight route wins, the bias gets no gradient
    assert W.grad[0, 0] != 0.0
    assert bias_equal.grad is None or bias_equal.grad[0, 0] == 0.0

    W2 = TropicalParam(np.array([[0.0]]))
    bias_above = TropicalParam(np.array([[3.0 + 1e-9]]))
    tape = Tape()
    out = maxplus(tape, W2, bias_above, y)
    loss = sigmoid_bce(tape, out, np.ones((1, 1)))
    tape.backward(loss)
    assert bias_above.grad[0, 0] != 0.0
    assert W2.grad is None or W2.grad[0, 0] == 0.0


def test_maxplus_gradient_routes_to_winner():
    rng = np.random.default_rng(2)
    values = rng.normal(size=(4, 6))
    active = rng.random((4, 6)) < 0.6
    active[0] = [True, False, False, False, False, False]
    W = TropicalParam(values, active)
    bias = TropicalParam(rng.normal(size=(4, 1)))
    y = Tensor(rng.normal(size=(6, 3)))
    t = (rng.random((4, 3)) < 0.5).astype(float)

    def build(tape):
        return sigmoid_bce(tape, maxplus(tape, W, bias, y), t)

    run_scalar(build)
    analytic = {W: W.grad.copy(), bias: bias.grad.copy(), y: y.grad.copy()}
    for p in (W, bias):
        num = numeric_grad(lambda: run_scalar(build), p.values)
        assert np.allclose(np.where(p.active, analytic[p], 0.0),
                           np.where(p.active, num, 0.0), atol=1e-6)
        assert (analytic[p][~p.active] == 0.0).all()
    num = numeric_grad(lambda: run_scalar(build), y.data)
    assert np.allclose(analytic[y], num, atol=1e-6)


def test_maxplus_bottom_policy():
    W = TropicalParam(np.zeros((2, 2)), np.array([[True, True], [False, False]]))
    y = Tensor(np.zeros((2, 1)))
    with pytest.raises(UndefinedOutputError):
        maxplus(Tape(), W, None, y)
    out = maxplus(Tape(), W, None, y, allow_bottom=True)
    assert out.data[1, 0] == BOTTOM_CLAMP
    # an active bias keeps the row defined
    bias = TropicalParam(np.array([[1.0], [2.0]]))
    out = maxplus(Tape(), W, bias, y)
    assert out.data[1, 0] == 2.0


def test_maxplus_inactive_values_are_never_read():
    active = np.array([[True, False]])
    a = maxplus(Tape(), TropicalParam(np.array([[1.0, -2.0]]), active), None,
                Tensor(np.array([[0.0], [100.0]])))
    b = maxplus(Tape(), TropicalParam(np.array([[1.0, 7e7]]), active), None,
                Tensor(np.array([[0.0], [100.0]])))
    assert np.array_equal(a.data, b.data)


def test_relu_gradcheck():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(3, 4)) + 0.05)  # nudge off the kink
    t = (rng.random((3, 4)) < 0.5).astype(float)

    def build(tape):
        return sigmoid_bce(tape, relu(tape, x), t)

    run_scalar(build)
    analytic = x.grad.copy()
    num = numeric_grad(lambda: run_scalar(build), x.data)
    assert np.allclose(analytic, num, atol=1e-6)


def test_group_max_is_piece_major():
    # rows [0, N) are piece 0 and rows [N, 2N) piece 1
    x = Tensor(np.array([[1.0], [2.0], [10.0], [0.0]]))
    out = group_max(Tape(), x, pooling=2)
    assert out.data[:, 0].tolist() == [10.0, 2.0]


def test_group_max_tie_goes_to_lowest_row():
    x = Tensor(np.array([[5.0], [5.0]]))
    tape = Tape()
    out = group_max(tape, x, pooling=2)
    loss = sigmoid_bce(tape, out, np.zeros((1, 1)))
    tape.backward(loss)
    assert x.grad[0, 0] != 0.0 and x.grad[1, 0] == 0.0


def test_group_max_gradcheck():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(6, 5)))
    t = (rng.random((2, 5)) < 0.5).astype(float)

    def build(tape):
        return sigmoid_bce(tape, group_max(tape, x, 3), t)

    run_scalar(build)
    analytic = x.grad.copy()
    num = numeric_grad(lambda: run_scalar(build), x.data)
    assert np.allclose(analytic, num, atol=1e-6)


def test_group_max_rejects_bad_pooling():
    with pytest.raises(ValueError):
        group_max(Tape(), Tensor(np.zeros((5, 2))), 2)


def test_batchnorm_train_statistics_and_grads():
    rng = np.random.default_rng(10)
    x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(4, 16)))
    gamma = Tensor(rng.uniform(0.5, 1.5, size=4))
    beta = Tensor(rng.normal(size=4))
    rmean, rvar = np.zeros(4), np.ones(4)
    tape = Tape()
    out = batchnorm(tape, x, gamma, beta, rmean, rvar, training=True)
    # normalized activations have zero mean and unit (biased) variance
    norm = (out.data - beta.data[:, None]) / gamma.data[:, None]
    assert np.allclose(norm.mean(axis=1), 0.0, atol=1e-12)
    assert np.allclose(norm.var(axis=1), 1.0, atol=1e-6)
    # running stats blend with momentum 0.1 and unbiased variance
    assert np.allclose(rmean, 0.1 * x.data.mean(axis=1))
    assert np.allclose(rvar, 0.9 + 0.1 * x.data.var(axis=1, ddof=1))

    t = (rng.random((4, 16)) < 0.5).astype(float)
    rm2, rv2 = rmean.copy(), rvar.copy()

    def build(tape):
        rm, rv = rm2.copy(), rv2.copy()
        out = batchnorm(tape, x, gamma, beta, rm, rv, training=True)
        return sigmoid_bce(tape, out, t)

    run_scalar(build)
    analytic = {p: p.grad.copy() for p in (x, gamma, beta)}
    for p in (x, gamma, beta):
        num = numeric_grad(lambda: run_scalar(build), p.data)
        assert np.allclose(analytic[p], num, atol=1e-5)


def test_batchnorm_eval_uses_running_stats():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    gamma, beta = Tensor(np.array([2.0])), Tensor(np.array([1.0]))
    rmean, rvar = np.array([2.0]), np.array([4.0])
    out = batchnorm(Tape(), x, gamma, beta, rmean, rvar, training=False)
    want = 2.0 * (x.data - 2.0) / np.sqrt(4.0 + 1e-5) + 1.0
    assert np.allclose(out.data, want)
    assert rmean[0] == 2.0 and rvar[0] == 4.0


def test_batchnorm_train_needs_two_samples():
    x = Tensor(np.zeros((2, 1)))
    g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
    with pytest.raises(ValueError):
        batchnorm(Tape(), x, g, b, np.zeros(2), np.ones(2), training=True)


def test_sigmoid_bce_value_and_grad():
    z = np.array([[0.0, 100.0, -100.0], [3.0, -2.0, 0.5]])
    t = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    logits = Tensor(z)
    tape = Tape()
    loss = tape_loss = sigmoid_bce(tape, logits, t)
    want = np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z))))
    assert float(loss.data) == pytest.approx(want, abs=1e-12)
    tape.backward(tape_loss)
    sig = 1 / (1 + np.exp(-z))
    assert np.allclose(logits.grad, (sig - t) / z.size, atol=1e-12)


def test_sigmoid_bce_rejects_soft_targets():
    with pytest.raises(ValueError):
        sigmoid_bce(Tape(), Tensor(np.zeros((1, 1))), np.array([[0.5]]))


def test_softmax_ce_matches_reference():
    rng = np.random.default_rng(12)
    z = rng.normal(size=(5, 7))
    labels = rng.integers(0, 5, size=7)
    logits = Tensor(z.copy())
    tape = Tape()
    loss = softmax_ce(tape, logits, labels)
    shifted = z - z.max(axis=0)
    logp = shifted - np.log(np.exp(shifted).sum(axis=0))
    assert float(loss.data) == pytest.approx(-logp[labels, np.arange(7)].mean())
    tape.backward(loss)
    p = np.exp(logp)
    p[labels, np.arange(7)] -= 1.0
    assert np.allclose(logits.grad, p / 7, atol=1e-12)


def test_softmax_ce_label_validation():
    with pytest.raises(ValueError):
        softmax_ce(Tape(), Tensor(np.zeros((3, 2))), np.array([0, 3]))
    with pytest.raises(ValueError):
        softmax_ce(Tape(), Tensor(np.zeros((3, 2))), np.array([0.5, 1.0]))


def test_tropical_param_mask_is_locked_and_copies():
    p = TropicalParam(np.ones((2, 2)), np.eye(2, dtype=bool))
    with pytest.raises(ValueError):
        p.active[0, 1] = True
    q = p.copy()
    q.values[0, 0] = 5.0
    assert p.values[0, 0] == 1.0
