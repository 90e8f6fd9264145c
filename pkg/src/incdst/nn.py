"""Dense layers with analytic backward passes and the AMSGrad optimizer.

Everything is float64 and operates on plain numpy arrays. Forward functions
return whatever the matching ``*_backward`` needs as a cache; backward
functions return gradients and never mutate their inputs.

LSTM weights follow the (input, forget, candidate, output) gate order along
the first axis: ``weight_ih`` is (4H, in), ``weight_hh`` is (4H, H) and there
is a single bias of length 4H.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidLabelError, InvalidShapeError, TrainingDivergedError

DTYPE = np.float64


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------


class Parameter:
    """A learnable tensor together with its gradient accumulator and AMSGrad state."""

    __slots__ = ("value", "grad", "m", "v", "v_max", "step_count")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.v_max = np.zeros_like(self.value)
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad.fill(0.0)

    def copy(self) -> "Parameter":
        p = Parameter(self.value.copy())
        p.grad = self.grad.copy()
        p.m = self.m.copy()
        p.v = self.v.copy()
        p.v_max = self.v_max.copy()
        p.step_count = self.step_count
        return p

    def __repr__(self):
        return f"Parameter(shape={self.shape}, step_count={self.step_count})"


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0 or self.learning_rate <= 0:
            raise ValueError("learning_rate and eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def amsgrad_step(param: Parameter, config: OptimizerConfig) -> Parameter:
    """Apply one bias-corrected AMSGrad update in place and zero the gradient.

    Uses a fused single-pass kernel when numba is available; the arithmetic
    per element is the same as :func:`amsgrad_step_reference`.
    """
    if _fused_amsgrad is None:
        return amsgrad_step_reference(param, config)
    t = param.step_count + 1
    ok = _fused_amsgrad(
        param.value.reshape(-1),
        param.grad.reshape(-1),
        param.m.reshape(-1),
        param.v.reshape(-1),
        param.v_max.reshape(-1),
        config.learning_rate,
        config.beta1,
        config.beta2,
        1.0 - config.beta1**t,
        1.0 - config.beta2**t,
        config.eps,
        config.weight_decay,
    )
    if not ok:
        raise TrainingDivergedError("non-finite gradient")
    param.step_count = t
    return param


def _amsgrad_kernel(value, grad, m, v, v_max, lr, b1, b2, bc1, bc2, eps, wd):
    n = value.shape[0]
    step = lr / bc1
    inv_bc2 = 1.0 / bc2
    for k in range(n):
        g = grad[k]
        if wd != 0.0:
            g = g + wd * value[k]
        if not np.isfinite(g):
            return False
    for k in range(n):
        g = grad[k]
        if wd != 0.0:
            g = g + wd * value[k]
        mk = m[k] * b1 + (1.0 - b1) * g
        vk = v[k] * b2 + (1.0 - b2) * (g * g)
        vm = max(v_max[k], vk)
        m[k] = mk
        v[k] = vk
        v_max[k] = vm
        value[k] -= step * mk / (np.sqrt(vm * inv_bc2) + eps)
        grad[k] = 0.0
    return True


try:
    import numba
except ImportError:  # pragma: no cover
    _fused_amsgrad = None
else:
    _fused_amsgrad = numba.njit(cache=True)(_amsgrad_kernel)


def amsgrad_step_reference(param: Parameter, config: OptimizerConfig) -> Parameter:
    """Plain numpy AMSGrad update (bias-corrected, running max of v)."""
    g = param.grad
    if config.weight_decay:
        g = g + config.weight_decay * param.value
    if not np.isfinite(g).all():
        raise TrainingDivergedError("non-finite gradient")

    b1, b2 = config.beta1, config.beta2
    param.step_count += 1
    t = param.step_count

    param.m *= b1
    param.m += (1.0 - b1) * g
    param.v *= b2
    param.v += (1.0 - b2) * (g * g)
    np.maximum(param.v_max, param.v, out=param.v_max)

    # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in
    step = config.learning_rate / (1.0 - b1**t)
    inv_bc2 = 1.0 / (1.0 - b2**t)
    param.value -= step * param.m / (np.sqrt(param.v_max * inv_bc2) + config.eps)
    param.grad.fill(0.0)
    return param


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


# ---------------------------------------------------------------------------
# affine
# ---------------------------------------------------------------------------


def affine(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y = W x + b. ``x`` may be a vector or a (T, in) stack of row vectors."""
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise InvalidShapeError(
            f"affine: W{W.shape}, b{b.shape}, x{x.shape} do not agree"
        )
    if x.ndim == 1:
        return W @ x + b
    return x @ W.T + b


def affine_backward(dy: np.ndarray, W: np.ndarray, x: np.ndarray):
    """Return (dW, db, dx) for y = affine(W, b, x)."""
    if dy.shape[-1] != W.shape[0] or x.shape[-1] != W.shape[1]:
        raise InvalidShapeError("affine_backward: shapes do not agree")
    if x.ndim == 1:
        return np.outer(dy, x), dy.copy(), W.T @ dy
    return dy.T @ x, dy.sum(axis=0), dy @ W


# ---------------------------------------------------------------------------
# activations and losses
# ---------------------------------------------------------------------------


def sigmoid(z) -> np.ndarray:
    return expit(np.asarray(z, dtype=DTYPE))


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Log-probabilities along the last axis, computed with max subtraction."""
    z = np.asarray(z, dtype=DTYPE)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise InvalidShapeError("log_softmax of an empty vector")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def nll_loss(log_probs: np.ndarray, target: int):
    """Negative log-likelihood of ``target``.

    Returns ``(loss, grad)`` where ``grad`` is taken with respect to the
    logits that produced ``log_probs`` via log_softmax.
    """
    n = log_probs.shape[-1]
    if not 0 <= target < n:
        raise InvalidLabelError(f"target {target} outside [0, {n})")
    grad = np.exp(log_probs)
    grad[target] -= 1.0
    return -float(log_probs[target]), grad


_PROB_FLOOR = 1e-12


def bce_multilabel_loss(probs: np.ndarray, targets: np.ndarray):
    """Mean binary cross-entropy over independent sigmoid outputs.

    The gradient is with respect to the pre-sigmoid logits, (p - y) / n.
    Probabilities are clamped away from 0 and 1 before taking logs.
    """
    probs = np.asarray(probs, dtype=DTYPE)
    targets = np.asarray(targets, dtype=DTYPE)
    if probs.shape != targets.shape or probs.ndim != 1:
        raise InvalidShapeError(
            f"bce: probs{probs.shape} vs targets{targets.shape}"
        )
    n = probs.shape[0]
    p = np.clip(probs, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    loss = -np.mean(targets * np.log(p) + (1.0 - targets) * np.log1p(-p))
    return float(loss), (probs - targets) / n


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Elementwise BCE computed from logits without overflow."""
    return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


def _check_lstm(x, c, h, weight_ih, weight_hh, bias):
    hidden = weight_hh.shape[1]
    if (
        weight_ih.shape[0] != 4 * hidden
        or weight_hh.shape != (4 * hidden, hidden)
        or bias.shape != (4 * hidden,)
        or x.shape[-1] != weight_ih.shape[1]
        or c.shape != (hidden,)
        or h.shape != (hidden,)
    ):
        raise InvalidShapeError(
            f"lstm: x{x.shape} c{c.shape} h{h.shape} W_ih{weight_ih.shape} "
            f"W_hh{weight_hh.shape} b{bias.shape}"
        )
    return hidden


def lstm_step(x, c, h, weight_ih, weight_hh, bias):
    """One LSTM cell update. Returns ``(c_new, h_new, cache)``."""
    H = _check_lstm(x, c, h, weight_ih, weight_hh, bias)
    z = weight_ih @ x + weight_hh @ h + bias
    s = expit(z)
    s[2 * H : 3 * H] = np.tanh(z[2 * H : 3 * H])
    i, f, g, o = s[:H], s[H : 2 * H], s[2 * H : 3 * H], s[3 * H :]
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return c_new, h_new, (x, c, h, s, tc)


def _gate_derivatives(s: np.ndarray, H: int) -> np.ndarray:
    d = s * (1.0 - s)
    g = s[..., 2 * H : 3 * H]
    d[..., 2 * H : 3 * H] = 1.0 - g * g
    return d


def lstm_step_backward(dc_new, dh_new, cache, weight_ih, weight_hh):
    """Backward of :func:`lstm_step`.

    Returns ``(dx, dc, dh, dweight_ih, dweight_hh, dbias)``.
    """
    x, c, h, s, tc = cache
    H = c.shape[0]
    i, f, g, o = s[:H], s[H : 2 * H], s[2 * H : 3 * H], s[3 * H :]
    dc_total = dc_new + dh_new * o * (1.0 - tc * tc)
    ds = np.concatenate([dc_total * g, dc_total * c, dc_total * i, dh_new * tc])
    dz = ds * _gate_derivatives(s, H)
    return (
        weight_ih.T @ dz,
        dc_total * f,
        weight_hh.T @ dz,
        np.outer(dz, x),
        np.outer(dz, h),
        dz,
    )


@dataclass
class SequenceCache:
    x: np.ndarray  # (T, in)
    c0: np.ndarray
    h0: np.ndarray
    gates: np.ndarray  # (T, 4H) activated gates, candidate stored as tanh
    cells: np.ndarray  # (T, H)
    tanh_cells: np.ndarray  # (T, H)
    hiddens: np.ndarray  # (T, H)
    extra: dict = field(default_factory=dict)


def _recurrent_forward_numpy(Z, weight_hh, c0, h0, gates, cells, tanh_cells, hiddens):
    H = c0.shape[0]
    c, h = c0, h0
    for t in range(Z.shape[0]):
        z = Z[t] + weight_hh @ h
        s = gates[t]
        expit(z, out=s)
        np.tanh(z[2 * H : 3 * H], out=s[2 * H : 3 * H])
        c = s[H : 2 * H] * c + s[:H] * s[2 * H : 3 * H]
        cells[t] = c
        tc = tanh_cells[t]
        np.tanh(c, out=tc)
        h = hiddens[t]
        np.multiply(s[3 * H :], tc, out=h)


def _recurrent_backward_numpy(dH, gates, cells, tanh_cells, c0, weight_hh, dZ, dc_next, dh_next):
    H = c0.shape[0]
    D = _gate_derivatives(gates, H)
    for t in range(dH.shape[0] - 1, -1, -1):
        s = gates[t]
        tc = tanh_cells[t]
        dh = dH[t] + dh_next
        dc = dc_next + dh * s[3 * H :] * (1.0 - tc * tc)
        c_prev = cells[t - 1] if t > 0 else c0
        dz = dZ[t]
        np.multiply(dc, s[2 * H : 3 * H], out=dz[:H])
        np.multiply(dc, c_prev, out=dz[H : 2 * H])
        np.multiply(dc, s[:H], out=dz[2 * H : 3 * H])
        np.multiply(dh, tc, out=dz[3 * H :])
        dz *= D[t]
        dh_next[:] = dz @ weight_hh
        dc_next[:] = dc * s[H : 2 * H]


# The numba kernels below compute the same recurrences element by element.
# Matrix-vector products are written as axpy loops over contiguous rows so
# they vectorize without reassociating any sum.


def _recurrent_forward_loop(Z, weight_hh_t, c0, h0, gates, cells, tanh_cells, hiddens):
    T, G = Z.shape
    H = G // 4
    z = np.empty(G)
    for t in range(T):
        for r in range(G):
            z[r] = 0.0
        for j in range(H):
            hj = h0[j] if t == 0 else hiddens[t - 1, j]
            for r in range(G):
                z[r] += weight_hh_t[j, r] * hj
        for r in range(G):
            x = Z[t, r] + z[r]
            if 2 * H <= r < 3 * H:
                gates[t, r] = np.tanh(x)
            elif x >= 0.0:
                gates[t, r] = 1.0 / (1.0 + np.exp(-x))
            else:
                e = np.exp(x)
                gates[t, r] = e / (1.0 + e)
        for k in range(H):
            cp = c0[k] if t == 0 else cells[t - 1, k]
            c = gates[t, H + k] * cp + gates[t, k] * gates[t, 2 * H + k]
            cells[t, k] = c
            tc = np.tanh(c)
            tanh_cells[t, k] = tc
            hiddens[t, k] = gates[t, 3 * H + k] * tc


def _recurrent_backward_loop(dH, gates, cells, tanh_cells, c0, weight_hh, dZ, dc_next, dh_next):
    T, H = dH.shape
    for t in range(T - 1, -1, -1):
        for k in range(H):
            dh = dH[t, k] + dh_next[k]
            i = gates[t, k]
            f = gates[t, H + k]
            g = gates[t, 2 * H + k]
            o = gates[t, 3 * H + k]
            tc = tanh_cells[t, k]
            dc = dc_next[k] + dh * o * (1.0 - tc * tc)
            cp = c0[k] if t == 0 else cells[t - 1, k]
            dZ[t, k] = (dc * g) * (i * (1.0 - i))
            dZ[t, H + k] = (dc * cp) * (f * (1.0 - f))
            dZ[t, 2 * H + k] = (dc * i) * (1.0 - g * g)
            dZ[t, 3 * H + k] = (dh * tc) * (o * (1.0 - o))
            dc_next[k] = dc * f
        for j in range(H):
            dh_next[j] = 0.0
        for r in range(4 * H):
            d = dZ[t, r]
            for j in range(H):
                dh_next[j] += d * weight_hh[r, j]


try:
    _fast_forward = numba.njit(cache=True)(_recurrent_forward_loop)
    _fast_backward = numba.njit(cache=True)(_recurrent_backward_loop)
except NameError:  # pragma: no cover - numba missing
    _fast_forward = _fast_backward = None

USE_FAST_KERNELS = _fast_forward is not None


def lstm_sequence(X, c0, h0, weight_ih, weight_hh, bias, fast: bool | None = None):
    """Run the cell over the rows of ``X``.

    Input-to-gate products for all steps are computed in one matrix product;
    only the recurrent product is stepped. Returns ``(cells, hiddens, cache)``.
    """
    T = X.shape[0]
    H = _check_lstm(X, c0, h0, weight_ih, weight_hh, bias)
    Z = X @ weight_ih.T + bias
    gates = np.empty((T, 4 * H))
    cells = np.empty((T, H))
    tanh_cells = np.empty((T, H))
    hiddens = np.empty((T, H))
    fast = USE_FAST_KERNELS if fast is None else fast
    if fast:
        _fast_forward(Z, np.ascontiguousarray(weight_hh.T), c0, h0, gates, cells, tanh_cells, hiddens)
    else:
        _recurrent_forward_numpy(Z, weight_hh, c0, h0, gates, cells, tanh_cells, hiddens)
    return cells, hiddens, SequenceCache(X, c0, h0, gates, cells, tanh_cells, hiddens)


def lstm_sequence_backward(
    dH, cache: SequenceCache, weight_ih, weight_hh, dc_last=None, dh_last=None, fast: bool | None = None
):
    """Backpropagation through time for :func:`lstm_sequence`.

    ``dH`` holds dL/dh_t for every step (zeros where no loss attaches);
    ``dc_last``/``dh_last`` are gradients flowing in from after the last step.
    Returns ``(dX, dc0, dh0, dweight_ih, dweight_hh, dbias)``.
    """
    T, H = cache.hiddens.shape
    dZ = np.empty((T, 4 * H))
    dh_next = np.zeros(H) if dh_last is None else np.array(dh_last, dtype=DTYPE)
    dc_next = np.zeros(H) if dc_last is None else np.array(dc_last, dtype=DTYPE)
    args = (dH, cache.gates, cache.cells, cache.tanh_cells, cache.c0, weight_hh, dZ, dc_next, dh_next)
    fast = USE_FAST_KERNELS if fast is None else fast
    if fast:
        _fast_backward(*args)
    else:
        _recurrent_backward_numpy(*args)
    h_prev = np.vstack([cache.h0[None, :], cache.hiddens[:-1]])
    dX = dZ @ weight_ih
    return dX, dc_next, dh_next, dZ.T @ cache.x, dZ.T @ h_prev, dZ.sum(axis=0)
