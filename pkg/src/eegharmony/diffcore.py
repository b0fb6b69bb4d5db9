"""Differentiable kernels with hand-written backward passes, and Adamax.

Kernels operate on batches: images are [N, C, H, W], vectors [N, F]. Each
forward returns ``(out, cache)``; the matching backward consumes the cache
and the upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {what}")


# --------------------------------------------------------------------------
# 3x3 convolution, stride 1, zero padding 1
# --------------------------------------------------------------------------

def _im2col3x3(x):
    N, C, H, W = x.shape
    xp = np.zeros((N, C, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((N, C, 3, 3, H, W), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, :, dy, dx] = xp[:, :, dy:dy + H, dx:dx + W]
    return cols.reshape(N, C * 9, H * W)


def conv2d_3x3(x, weights, bias):
    """Cross-correlation with a 3x3 kernel; output spatial size equals input."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"conv input must be [N, Cin, H, W], got {x.shape}")
    N, Cin, H, W = x.shape
    Cout = weights.shape[0]
    if weights.shape != (Cout, Cin, 3, 3) or bias.shape != (Cout,):
        raise ShapeError(f"weights {weights.shape} / bias {bias.shape} incompatible with input {x.shape}")
    cols = _im2col3x3(x)
    out = np.matmul(weights.reshape(Cout, Cin * 9), cols)
    out += bias[:, None]
    return out.reshape(N, Cout, H, W), (cols, x.shape, weights)


def conv2d_3x3_backward(dout, cache, need_input_grad=True):
    """Gradients (dx, dweights, dbias); dx is None when not requested."""
    cols, xshape, weights = cache
    N, Cin, H, W = xshape
    Cout = weights.shape[0]
    d = dout.reshape(N, Cout, H * W)
    # batched matmul against the transposed view avoids copying cols
    dw = np.matmul(d, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weights.shape)
    db = d.sum(axis=(0, 2))
    dx = None
    if need_input_grad:
        # full correlation with the spatially flipped, channel-swapped kernel
        flipped = np.ascontiguousarray(weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        dx = np.matmul(flipped.reshape(Cin, Cout * 9), _im2col3x3(dout)).reshape(xshape)
    return dx, dw, db


# --------------------------------------------------------------------------
# 2x2 max pooling, stride 2, ceil mode
# --------------------------------------------------------------------------

def maxpool2x2_ceil(x):
    """2x2/2 max pooling; a trailing odd row or column forms a partial window."""
    x = np.asarray(x)
    N, C, H, W = x.shape
    H2, W2 = -(-H // 2), -(-W // 2)
    xp = np.full((N, C, 2 * H2, 2 * W2), -np.inf, dtype=x.dtype)
    xp[:, :, :H, :W] = x
    # window entries in row-major order: (0,0), (0,1), (1,0), (1,1)
    win = xp.reshape(N, C, H2, 2, W2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H2, W2, 4)
    arg = win.argmax(axis=-1)      # first occurrence on ties
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool2x2_ceil_backward(dout, cache):
    arg, (N, C, H, W) = cache
    H2, W2 = arg.shape[2], arg.shape[3]
    dwin = np.zeros((N, C, H2, W2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dxp = dwin.reshape(N, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * H2, 2 * W2)
    return dxp[:, :, :H, :W]


# --------------------------------------------------------------------------
# dense, relu, dropout
# --------------------------------------------------------------------------

def dense(x, weights, bias):
    """``x @ weights.T + bias`` for x of shape [N, in] (or a single [in] vector)."""
    x = np.asarray(x)
    if x.shape[-1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise ShapeError(f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    return x @ weights.T + bias, (x, weights)


def dense_backward(dout, cache):
    x, weights = cache
    if x.ndim == 1:
        return weights.T @ dout, np.outer(dout, x), dout.copy()
    return dout @ weights, dout.T @ x, dout.sum(axis=0)


def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def dropout50(x, rng=None, training=False):
    """Inverted dropout at rate 0.5: kept units are doubled while training."""
    if not training:
        return x, None
    mask = (rng.random(x.shape) >= 0.5).astype(x.dtype) * 2
    return x * mask, mask


def dropout50_backward(dout, mask):
    return dout if mask is None else dout * mask


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    Accepts a single logit vector with an integer label, or a batch [N, 2]
    with N labels (loss averaged over the batch).
    """
    logits = np.asarray(logits)
    _check_finite(logits, "logits")
    single = logits.ndim == 1
    z = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return float(loss), (grad[0] if single else grad)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# Adamax
# --------------------------------------------------------------------------

DECAY_MODES = ("l2", "decoupled", "lr")


@dataclass
class AdamaxState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001
    decay_mode: str = "l2"
    t: int = 0
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decay_mode not in DECAY_MODES:
            raise ValueError(f"decay_mode must be one of {DECAY_MODES}")


def adamax_step(params: dict, grads: dict, state: AdamaxState) -> None:
    """In-place Adamax update of every array in ``params``.

    ``decay_mode`` selects how ``weight_decay`` enters: ``"l2"`` adds
    ``wd * param`` to the gradient, ``"decoupled"`` shrinks the parameter by
    ``lr * wd * param`` directly, ``"lr"`` anneals the step size as
    ``lr / (1 + wd * (t - 1))``.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    lr = state.lr
    if state.decay_mode == "lr":
        lr = lr / (1.0 + state.weight_decay * (t - 1))
    step = lr / (1.0 - state.beta1 ** t)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if state.decay_mode == "l2" and state.weight_decay:
            g = g + state.weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.u[name] = np.zeros_like(p)
        m = state.m[name]
        u = state.u[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * u, np.abs(g), out=u)
        if state.decay_mode == "decoupled" and state.weight_decay:
            p -= lr * state.weight_decay * p
        p -= step * m / (u + state.eps)
