"""Differentiable primitives.

Each function takes tensors (or array-likes, which become constants) and
returns a new tensor. Shapes follow numpy conventions; time series batches
are laid out as ``(N, T, C)``.
"""

import math

import numpy as np

from ..errors import LabelIndexError, NumericError, ShapeError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b):
    # constants adopt the dtype of the tensor operand
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return as_tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


# elementwise arithmetic --------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), backward)


def mul(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return make_result(out, (a, b), backward)


def matmul(a, b):
    """Matrix product with numpy ``@`` semantics over leading batch axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        return _matmul_folded(a, b)
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(out, (a, b), backward)


def _matmul_folded(a, b):
    # (..., k) @ (k, n): fold leading axes so the weight gradient is one GEMM
    k, n = b.shape
    a2 = a.data.reshape(-1, k)
    out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

    def backward(g):
        g2 = g.reshape(-1, n)
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def dense(x, weight, bias=None):
    """Affine map ``x @ weight + bias`` with ``weight`` laid out (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# reductions and reshaping ------------------------------------------------

def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make_result(out, tuple(tensors), backward)


concat_channels = concat


def global_avg_pool(x):
    """Mean over the time axis: ``(N, T, C) -> (N, C)``."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects (N, T, C), got {x.shape}")
    return mean(x, axis=1)


# activations -------------------------------------------------------------

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return make_result(out, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1 - out * out),)

    return make_result(out, (x,), backward)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return make_result(out, (x,), backward)


def log(x):
    x = as_tensor(x)
    if (x.data <= 0).any():
        raise NumericError("log of non-positive value")
    out = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return make_result(out, (x,), backward)


def _softmax_array(z, axis):
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis=-1):
    x = as_tensor(x)
    s = _softmax_array(x.data, axis)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward)


def dropout(x, rate, training, rng=None):
    """Inverted dropout. Outside training, or at rate 0, ``x`` is returned as is."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = 1.0 - rate
    mask = (rng.random(x.shape, dtype=np.float32) < keep).astype(x.dtype)
    mask *= 1.0 / keep

    def backward(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), backward)


# losses ------------------------------------------------------------------

def cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects (N, C) logits and N labels, got {logits.shape}, {labels.shape}")
    n, c = logits.shape
    if n and (labels.min() < 0 or labels.max() >= c):
        raise LabelIndexError(f"label out of range [0, {c})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    out = np.asarray(-logp[rows, labels].mean(), dtype=z.dtype)

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / n),)

    return make_result(out, (logits,), backward)


# convolution -------------------------------------------------------------

def _conv_geometry(t, k, stride, padding):
    if padding == "same":
        t_out = -(-t // stride)
        total = max((t_out - 1) * stride + k - t, 0)
        left = total // 2
        return t_out, left, total - left
    if padding == "valid":
        if k > t:
            raise ShapeError(f"kernel size {k} exceeds series length {t} with valid padding")
        return (t - k) // stride + 1, 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def conv1d(x, kernels, bias=None, stride=1, padding="same"):
    """Temporal cross-correlation.

    ``x`` is ``(N, T, Cin)`` or ``(T, Cin)``, ``kernels`` is ``(k, Cin, Cout)``.
    Same padding pads with zeros symmetrically, the odd element going right,
    so the output length is ``ceil(T / stride)``. No activation is applied.
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or kernels.ndim != 3:
        raise ShapeError(f"conv1d expects (N, T, Cin) input and (k, Cin, Cout) kernels, got {x.shape}, {kernels.shape}")
    n, t, cin = x.shape
    k, kcin, cout = kernels.shape
    if kcin != cin:
        raise ShapeError(f"conv1d channel mismatch: input has {cin}, kernels expect {kcin}")
    if k < 1 or stride < 1 or t < 1:
        raise ShapeError("conv1d needs k >= 1, stride >= 1 and T >= 1")
    t_out, left, right = _conv_geometry(t, k, stride, padding)

    xd = x.data
    if left or right:
        xp = np.pad(xd, ((0, 0), (left, right), (0, 0)))
    else:
        xp = xd
    if k == 1:
        cols = xp[:, ::stride][:, :t_out].reshape(n * t_out, cin)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride][:, :t_out]
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n * t_out, k * cin)
    w2 = kernels.data.reshape(k * cin, cout)
    out = cols @ w2
    parents = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        parents.append(bias)
    out = out.reshape(n, t_out, cout)

    def backward(g):
        g2 = g.reshape(n * t_out, cout)
        gx = gk = gb = None
        if kernels.requires_grad:
            gk = (cols.T @ g2).reshape(k, cin, cout)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape(n, t_out, k, cin)
            gxp = np.zeros((n, t + left + right, cin), dtype=g.dtype)
            span = stride * (t_out - 1) + 1
            for j in range(k):
                gxp[:, j : j + span : stride] += gcols[:, :, j]
            gx = gxp[:, left : left + t]
        return (gx, gk) if bias is None else (gx, gk, gb)

    result = make_result(out, tuple(parents), backward)
    if squeeze:
        result = reshape(result, (t_out, cout))
    return result


# batch normalisation -----------------------------------------------------

class BatchNorm:
    """Learnable scale/shift plus running statistics for one feature axis.

    ``running = momentum * running + (1 - momentum) * batch``; the batch
    variance is the biased one, so a batch of one normalises to zero.
    """

    def __init__(self, features, eps=1e-5, momentum=0.9, dtype=np.float32):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)

    @property
    def features(self):
        return self.gamma.shape[0]

    def __call__(self, x, training):
        return batchnorm(x, self, training)


def batchnorm(x, state, training):
    """Normalise over every axis but the last (batch, and time for series)."""
    x = as_tensor(x)
    if x.shape[-1] != state.features:
        raise ShapeError(f"batchnorm expects {state.features} features, got {x.shape}")
    axes = tuple(range(x.ndim - 1))
    m = int(np.prod([x.shape[a] for a in axes]))
    if m == 0:
        raise ShapeError("batchnorm on an empty batch")
    gamma, beta = state.gamma, state.beta
    xd = x.data
    if training:
        mu = xd.mean(axis=axes)
        var = ((xd - mu) ** 2).mean(axis=axes)
        if not (np.isfinite(mu).all() and np.isfinite(var).all()):
            raise NumericError("non-finite batch statistics")
        mom = state.momentum
        state.running_mean = (mom * state.running_mean + (1 - mom) * mu).astype(state.running_mean.dtype)
        state.running_var = (mom * state.running_var + (1 - mom) * var).astype(state.running_var.dtype)
    else:
        mu = state.running_mean
        var = state.running_var
    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(xd.dtype)
    xhat = (xd - mu) * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            if training:
                s1 = dxhat.sum(axis=axes)
                s2 = (dxhat * xhat).sum(axis=axes)
                gx = (inv_std / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_result(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward)


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
