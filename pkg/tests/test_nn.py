import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from incdst import nn
from incdst.errors import InvalidLabelError, InvalidShapeError, TrainingDivergedError
from oracles import hp_log_softmax, hp_sigmoid, numeric_grad, rel_error


# -- affine -----------------------------------------------------------------


def test_affine_identity():
    y = nn.affine(np.eye(2), np.zeros(2), np.array([3.0, -1.0]))
    assert np.array_equal(y, [3.0, -1.0])


def test_affine_zero_weights_returns_bias():
    y = nn.affine(np.zeros((2, 5)), np.array([1.0, 2.0]), np.arange(5.0))
    assert np.array_equal(y, [1.0, 2.0])


def test_affine_shape_mismatch():
    with pytest.raises(InvalidShapeError):
        nn.affine(np.zeros((2, 3)), np.zeros(2), np.zeros(4))
    with pytest.raises(InvalidShapeError):
        nn.affine(np.zeros((2, 3)), np.zeros(3), np.zeros(3))


def test_affine_rows_match_vectors(rng):
    W, b, X = rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=(5, 3))
    rows = nn.affine(W, b, X)
    for t in range(5):
        assert np.allclose(rows[t], nn.affine(W, b, X[t]), atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_affine_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    W, b, x = rng.normal(size=(4, 6)), rng.normal(size=4), rng.normal(size=6)
    a = rng.normal(size=4)
    f = lambda: float(a @ nn.affine(W, b, x))
    dW, db, dx = nn.affine_backward(a, W, x)
    assert rel_error(dW, numeric_grad(f, W)) < 1e-6
    assert rel_error(db, numeric_grad(f, b)) < 1e-6
    assert rel_error(dx, numeric_grad(f, x)) < 1e-6


# -- LSTM step --------------------------------------------------------------


def _lstm_params(rng, n_in=5, H=4, scale=0.5):
    return (
        rng.normal(scale=scale, size=(4 * H, n_in)),
        rng.normal(scale=scale, size=(4 * H, H)),
        rng.normal(scale=scale, size=4 * H),
    )


def test_lstm_zero_weights_zero_state():
    W_ih, W_hh, bias = np.zeros((16, 5)), np.zeros((16, 4)), np.zeros(16)
    c, h, _ = nn.lstm_step(np.arange(5.0), np.zeros(4), np.zeros(4), W_ih, W_hh, bias)
    assert np.array_equal(c, np.zeros(4)) and np.array_equal(h, np.zeros(4))


def test_lstm_step_is_deterministic(rng):
    W_ih, W_hh, bias = _lstm_params(rng)
    x, c0, h0 = rng.normal(size=5), rng.normal(size=4), rng.normal(size=4)
    a = nn.lstm_step(x, c0, h0, W_ih, W_hh, bias)
    b = nn.lstm_step(x, c0, h0, W_ih, W_hh, bias)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_lstm_shape_errors(rng):
    W_ih, W_hh, bias = _lstm_params(rng)
    with pytest.raises(InvalidShapeError):
        nn.lstm_step(np.zeros(6), np.zeros(4), np.zeros(4), W_ih, W_hh, bias)
    with pytest.raises(InvalidShapeError):
        nn.lstm_step(np.zeros(5), np.zeros(3), np.zeros(4), W_ih, W_hh, bias)


def test_lstm_gate_layout_by_hand():
    # only the forget gate bias is large: c' ~ c, and i * g = 0.5 * tanh(0)
    H = 2
    bias = np.zeros(4 * H)
    bias[H : 2 * H] = 50.0
    c0 = np.array([0.3, -0.2])
    c, h, _ = nn.lstm_step(np.zeros(3), c0, np.zeros(H), np.zeros((8, 3)), np.zeros((8, 2)), bias)
    assert np.allclose(c, c0, atol=1e-12)
    assert np.allclose(h, 0.5 * np.tanh(c0), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_lstm_step_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    W_ih, W_hh, bias = _lstm_params(rng)
    x, c0, h0 = rng.normal(size=5), rng.normal(size=4), rng.normal(size=4)
    a, b = rng.normal(size=4), rng.normal(size=4)

    def f():
        c, h, _ = nn.lstm_step(x, c0, h0, W_ih, W_hh, bias)
        return float(a @ c + b @ h)

    _, _, cache = nn.lstm_step(x, c0, h0, W_ih, W_hh, bias)
    dx, dc, dh, dW_ih, dW_hh, db = nn.lstm_step_backward(a, b, cache, W_ih, W_hh)
    H = 4
    num_ih, num_hh = numeric_grad(f, W_ih), numeric_grad(f, W_hh)
    for gate in range(4):
        blk = slice(gate * H, (gate + 1) * H)
        assert rel_error(dW_ih[blk], num_ih[blk]) < 1e-5
        assert rel_error(dW_hh[blk], num_hh[blk]) < 1e-5
    assert rel_error(db, numeric_grad(f, bias)) < 1e-5
    assert rel_error(dx, numeric_grad(f, x)) < 1e-5
    assert rel_error(dc, numeric_grad(f, c0)) < 1e-5
    assert rel_error(dh, numeric_grad(f, h0)) < 1e-5


@pytest.mark.parametrize("fast", [False, True])
def test_lstm_sequence_matches_stepping(rng, fast):
    if fast and not nn.USE_FAST_KERNELS:
        pytest.skip("compiled kernels unavailable")
    W_ih, W_hh, bias = _lstm_params(rng)
    X = rng.normal(size=(7, 5))
    c, h = rng.normal(size=4), rng.normal(size=4)
    cells, hiddens, _ = nn.lstm_sequence(X, c, h, W_ih, W_hh, bias, fast=fast)
    for t in range(7):
        c, h, _ = nn.lstm_step(X[t], c, h, W_ih, W_hh, bias)
        assert np.allclose(cells[t], c, atol=1e-12) and np.allclose(hiddens[t], h, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_lstm_sequence_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    W_ih, W_hh, bias = _lstm_params(rng, n_in=3, H=3)
    X, c0, h0 = rng.normal(size=(6, 3)), rng.normal(size=3), rng.normal(size=3)
    A = rng.normal(size=(6, 3))

    def f():
        _, hiddens, _ = nn.lstm_sequence(X, c0, h0, W_ih, W_hh, bias, fast=False)
        return float((A * hiddens).sum())

    _, _, cache = nn.lstm_sequence(X, c0, h0, W_ih, W_hh, bias)
    dX, dc0, dh0, dW_ih, dW_hh, db = nn.lstm_sequence_backward(A, cache, W_ih, W_hh)
    for analytic, wrt in ((dX, X), (dc0, c0), (dh0, h0), (dW_ih, W_ih), (dW_hh, W_hh), (db, bias)):
        assert rel_error(analytic, numeric_grad(f, wrt)) < 1e-5


def test_fast_and_reference_kernels_agree(rng):
    if not nn.USE_FAST_KERNELS:
        pytest.skip("compiled kernels unavailable")
    W_ih, W_hh, bias = _lstm_params(rng, n_in=6, H=8)
    X, c0, h0 = rng.normal(size=(30, 6)), rng.normal(size=8), rng.normal(size=8)
    dH = rng.normal(size=(30, 8))
    out = {}
    for fast in (False, True):
        cells, hiddens, cache = nn.lstm_sequence(X, c0, h0, W_ih, W_hh, bias, fast=fast)
        out[fast] = (cells, hiddens) + nn.lstm_sequence_backward(dH, cache, W_ih, W_hh, fast=fast)
    for a, b in zip(out[False], out[True]):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-13)


# -- softmax / sigmoid ------------------------------------------------------


def test_log_softmax_symmetric():
    assert np.allclose(nn.log_softmax(np.zeros(2)), np.log([0.5, 0.5]), atol=0)


def test_log_softmax_extreme_no_overflow():
    with np.errstate(over="raise", invalid="raise"):
        out = nn.log_softmax(np.array([1000.0, 0.0]))
    assert abs(out[0]) < 1e-15 and abs(out[1] + 1000.0) < 1e-12


def test_log_softmax_high_precision_oracle():
    z = np.array([1.0, 2.0, 3.0])
    assert np.max(np.abs(nn.log_softmax(z) - hp_log_softmax(z))) < 1e-12


def test_log_softmax_empty():
    with pytest.raises(InvalidShapeError):
        nn.log_softmax(np.zeros(0))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)))
def test_log_softmax_normalized(z):
    assert abs(np.exp(nn.log_softmax(z)).sum() - 1.0) < 1e-9


def test_sigmoid_values():
    assert nn.sigmoid(0.0) == 0.5
    with np.errstate(over="raise", invalid="raise"):
        assert 0.0 <= nn.sigmoid(-1000.0) < 1e-300
        assert nn.sigmoid(1000.0) == 1.0
    assert abs(nn.sigmoid(1.0) - hp_sigmoid(1.0)) < 1e-15
    assert abs(nn.sigmoid(1.0) - 0.7310585786300049) < 1e-15


# -- losses -----------------------------------------------------------------


def test_nll_near_one_mass():
    lp = nn.log_softmax(np.array([50.0, 0.0, 0.0]))
    loss, _ = nn.nll_loss(lp, 0)
    assert loss < 1e-20


def test_nll_uniform():
    loss, grad = nn.nll_loss(nn.log_softmax(np.zeros(4)), 2)
    assert abs(loss - np.log(4)) < 1e-15
    assert np.allclose(grad, [0.25, 0.25, -0.75, 0.25])


def test_nll_bad_target():
    with pytest.raises(InvalidLabelError):
        nn.nll_loss(np.log(np.full(3, 1 / 3)), 3)
    with pytest.raises(InvalidLabelError):
        nn.nll_loss(np.log(np.full(3, 1 / 3)), -1)


@pytest.mark.parametrize("seed", range(10))
def test_nll_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=6)
    target = int(rng.integers(6))
    _, grad = nn.nll_loss(nn.log_softmax(z), target)
    assert rel_error(grad, numeric_grad(lambda: nn.nll_loss(nn.log_softmax(z), target)[0], z)) < 1e-6


def test_bce_exact_targets():
    loss, _ = nn.bce_multilabel_loss(np.array([1.0, 0.0, 1.0]), np.array([1.0, 0.0, 1.0]))
    assert loss < 1e-11


def test_bce_half():
    loss, _ = nn.bce_multilabel_loss(np.full(5, 0.5), np.array([1, 0, 1, 1, 0]))
    assert abs(loss - np.log(2)) < 1e-15


def test_bce_shape_mismatch():
    with pytest.raises(InvalidShapeError):
        nn.bce_multilabel_loss(np.full(3, 0.5), np.zeros(4))


@pytest.mark.parametrize("seed", range(10))
def test_bce_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=8)
    y = (rng.random(8) < 0.5).astype(float)
    _, grad = nn.bce_multilabel_loss(nn.sigmoid(z), y)
    f = lambda: nn.bce_multilabel_loss(nn.sigmoid(z), y)[0]
    assert rel_error(grad, numeric_grad(f, z)) < 1e-6
    assert abs(nn.bce_with_logits(z, y).mean() - f()) < 1e-12


# -- AMSGrad ----------------------------------------------------------------


def test_amsgrad_first_step_by_hand():
    p = nn.Parameter(np.array([0.0]))
    p.grad[:] = 1.0
    nn.amsgrad_step(p, nn.OptimizerConfig())
    assert np.allclose(p.m, 0.1, rtol=1e-15) and np.allclose(p.v, 0.001, rtol=1e-12)
    # m_hat = 1, v_max_hat = 1
    assert abs(p.value[0] - (-0.001 / (1.0 + 1e-8))) < 1e-18
    assert p.step_count == 1 and p.grad[0] == 0.0


def test_amsgrad_update_independent_of_magnitude():
    a, b = nn.Parameter(np.array([0.0])), nn.Parameter(np.array([1e6]))
    for p in (a, b):
        p.grad[:] = 0.3
        nn.amsgrad_step(p, nn.OptimizerConfig())
    assert abs((a.value[0] - 0.0) - (b.value[0] - 1e6)) < 1e-9


def test_amsgrad_v_max_holds_after_sign_flip():
    p = nn.Parameter(np.array([0.0]))
    p.grad[:] = 1.0
    nn.amsgrad_step(p, nn.OptimizerConfig())
    first = p.v_max.copy()
    p.grad[:] = -1.0
    nn.amsgrad_step(p, nn.OptimizerConfig())
    assert np.all(p.v_max >= first)


@settings(max_examples=50, deadline=None)
@given(st.lists(arrays(np.float64, 3, elements=st.floats(-10, 10)), min_size=1, max_size=15))
def test_amsgrad_v_max_monotone(grads):
    p = nn.Parameter(np.zeros(3))
    prev = p.v_max.copy()
    for g in grads:
        p.grad[:] = g
        nn.amsgrad_step(p, nn.OptimizerConfig())
        assert np.all(p.v_max >= prev) and np.all(p.v >= 0)
        prev = p.v_max.copy()


@pytest.mark.parametrize("wd", [0.0, 0.01])
def test_fused_and_reference_amsgrad_identical(rng, wd):
    cfg = nn.OptimizerConfig(weight_decay=wd)
    a = nn.Parameter(rng.normal(size=(5, 7)))
    b = a.copy()
    for _ in range(10):
        g = rng.normal(size=(5, 7))
        a.grad[:] = g
        b.grad[:] = g
        nn.amsgrad_step(a, cfg)
        nn.amsgrad_step_reference(b, cfg)
    for f in ("value", "m", "v", "v_max"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_amsgrad_nonfinite_gradient():
    p = nn.Parameter(np.zeros(2))
    p.grad[:] = [1.0, np.nan]
    with pytest.raises(TrainingDivergedError):
        nn.amsgrad_step(p, nn.OptimizerConfig())
    p.grad[:] = [np.inf, 0.0]
    with pytest.raises(TrainingDivergedError):
        nn.amsgrad_step_reference(p, nn.OptimizerConfig())


def test_optimizer_config_validation():
    assert nn.OptimizerConfig() == nn.OptimizerConfig(0.001, 0.9, 0.999, 1e-8, 0.0)
    for bad in ({"beta1": 1.0}, {"beta2": -0.1}, {"eps": 0.0}, {"learning_rate": 0.0}):
        with pytest.raises(ValueError):
            nn.OptimizerConfig(**bad)
