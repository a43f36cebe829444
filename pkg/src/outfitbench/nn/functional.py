"""Fused differentiable functions built on :mod:`outfitbench.nn.tensor`.

The fused ops (softmax, cross entropy, layer norm, ...) compute their own
backward in closed form instead of chaining primitive nodes.  That keeps the
graph small and the numerics stable.
"""

from __future__ import annotations

import numpy as np

from ..errors import InputError
from .tensor import Tensor, _node, _sigmoid, add, concat, mul, raw_matmul

NEG_INF = -1e30


def _logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    peak = x.max(axis=axis, keepdims=True)
    return peak + np.log(np.exp(x - peak).sum(axis=axis, keepdims=True))


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def log_softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return x - _logsumexp(x, axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = softmax_array(x.data, axis)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = log_softmax_array(x.data, axis)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), backward)


def cross_entropy(logits: Tensor, targets, weights=None, reduction: str = "mean") -> Tensor:
    """Softmax cross entropy of ``logits[..., V]`` against integer targets.

    ``weights`` (same shape as targets) scales each position; with
    ``reduction="mean"`` the weighted sum is divided by the weight total, so
    zero-weight positions act as padding.
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise InputError(f"target shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise InputError(f"target index outside [0, {vocab})")
    flat = logits.data.reshape(-1, vocab)
    tflat = targets.reshape(-1)
    lse = _logsumexp(flat)[:, 0]
    picked = flat[np.arange(len(tflat)), tflat]
    losses = (lse - picked).reshape(targets.shape)
    if weights is None:
        w = np.ones(targets.shape, dtype=flat.dtype)
    else:
        w = np.asarray(weights, dtype=flat.dtype)
    if reduction == "mean":
        denom = max(float(w.sum()), 1e-12)
        out = np.asarray((losses * w).sum() / denom, dtype=flat.dtype)
        scale = w / denom
    elif reduction == "sum":
        out = np.asarray((losses * w).sum(), dtype=flat.dtype)
        scale = w
    elif reduction == "none":
        out = losses * w
        scale = None
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(g):
        probs = np.exp(flat - lse[:, None])
        probs[np.arange(len(tflat)), tflat] -= 1.0
        coef = (g * w) if scale is None else (g * scale)
        return ((probs * coef.reshape(-1, 1)).reshape(logits.shape),)

    return _node(out, (logits,), backward)


def bce_with_logits(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    y = np.asarray(labels, dtype=logits.dtype)
    x = logits.data
    losses = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    if reduction == "mean":
        out = np.asarray(losses.mean(), dtype=x.dtype)
        factor = 1.0 / losses.size
    else:
        out = losses
        factor = 1.0

    def backward(g):
        return ((_sigmoid(x) - y) * g * factor,)

    return _node(out, (logits,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv / d * (d * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise InputError("dropout in training mode needs an explicit generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for inputs of any leading shape."""
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = raw_matmul(flat, weight.data).reshape(*lead, weight.shape[1])
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = flat.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward)


def additive_mask(scores: Tensor, allowed: np.ndarray) -> Tensor:
    """Push disallowed entries of ``scores`` to a large negative value."""
    bias = np.where(allowed, 0.0, NEG_INF).astype(scores.dtype)
    return add(scores, Tensor(bias))


def interaction(x: Tensor, y: Tensor) -> Tensor:
    """``[x, y, (x - y)^2, x * y]`` along the last axis."""
    diff = x - y
    return concat([x, y, mul(diff, diff), mul(x, y)], axis=-1)
