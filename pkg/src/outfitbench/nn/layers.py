"""Layers: dense, embedding, layer norm, attention, transformer blocks, LSTM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from . import functional as F
from .tensor import (Tensor, broadcast_to, concat, matmul, reshape, sigmoid, take_along, take_rows,
                     tanh, transpose, tsum)


def parameter(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, shape: tuple, bound: float, dtype=np.float64) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Container with recursive parameter discovery.

    Parameters are attribute tensors with ``requires_grad``; children are
    attribute modules or lists of modules.  Discovery follows attribute
    insertion order, so parameter names are stable across runs.
    """

    training = True
    _rng = None

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
        for key, child in self._children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def set_rng(self, rng: np.random.Generator | None):
        """Share one dropout generator with every submodule."""
        for m in self.modules():
            m._rng = rng

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigurationError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigurationError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype).copy()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float64, scale: float = 1.0):
        bound = scale / math.sqrt(d_in)
        self.weight = parameter(uniform_init(rng, (d_in, d_out), bound, dtype))
        self.bias = parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, dtype=np.float64, scale: float = 0.1):
        self.table = parameter(rng.normal(0.0, scale, size=(num, dim)).astype(dtype))

    def forward(self, index) -> Tensor:
        return take_rows(self.table, index)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim, dtype=dtype))
        self.beta = parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, rate: float):
        self.rate = rate

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.rate, self._rng, self.training)


class FeedForward(Module):
    def __init__(self, d_model: int, d_hidden: int, rng, dtype=np.float64):
        self.up = Linear(d_model, d_hidden, rng, dtype=dtype)
        self.down = Linear(d_hidden, d_model, rng, dtype=dtype)

    def forward(self, x):
        return self.down(self.up(x).relu())


class MLP(Module):
    """Stack of ReLU dense layers (final layer linear unless ``final_relu``)."""

    def __init__(self, sizes: list[int], rng, dtype=np.float64, final_relu: bool = True):
        self.layers = [Linear(a, b, rng, dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])]
        self.final_relu = final_relu

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_relu:
                x = x.relu()
        return x


@dataclass
class AttentionConfig:
    model_dim: int = 128
    num_heads: int = 8
    num_layers: int = 4
    dropout_rate: float = 0.01
    causal: bool = False
    use_positional_encoding: bool = False
    ff_mult: int = 4

    def __post_init__(self):
        if self.model_dim <= 0 or self.num_heads <= 0 or self.num_layers < 0:
            raise ConfigurationError("attention sizes must be positive")
        if self.model_dim % self.num_heads:
            raise ConfigurationError(
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate {self.dropout_rate} outside [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def sinusoidal_positions(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: dim // 2])
    return table.astype(dtype)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``num_heads`` heads.

    In double precision each query visits its visible keys in a canonical
    order (sorted by a fixed random projection of the key) with masked keys
    last.  Mathematically this changes nothing; numerically every reduction
    over keys then sees the same operands in the same order whatever order
    the keys arrived in, so permutation and causality properties hold
    exactly rather than up to rounding.  Single precision takes the plain
    batched-matmul route.
    """

    def __init__(self, d_model: int, num_heads: int, rng, dropout_rate: float = 0.0,
                 dtype=np.float64, d_memory: int | None = None):
        if d_model % num_heads:
            raise ConfigurationError(f"model_dim {d_model} is not divisible by num_heads {num_heads}")
        d_memory = d_memory or d_model
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.q = Linear(d_model, d_model, rng, dtype=dtype)
        self.k = Linear(d_memory, d_model, rng, dtype=dtype)
        self.v = Linear(d_memory, d_model, rng, dtype=dtype)
        self.out = Linear(d_model, d_model, rng, dtype=dtype)
        self.drop = Dropout(dropout_rate)
        self._probe = rng.normal(size=self.head_dim).astype(dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, s, _ = x.shape
        return transpose(reshape(x, (b, s, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def _exact_mix(self, q, k, v, mask, scale):
        b, h, sq, dh = q.shape
        sk = k.shape[2]
        # every (query, key) score is an independent length-dh reduction
        scores = tsum(reshape(q, (b, h, sq, 1, dh)) * reshape(k, (b, h, 1, sk, dh)), axis=-1) * scale
        signature = (k.data * self._probe).sum(axis=-1)
        keyed = np.where(mask, signature[:, :, None, :], np.inf)
        order = np.argsort(keyed, axis=-1, kind="stable")
        scores = take_along(scores, order, axis=-1)
        mask = np.take_along_axis(mask, order, axis=-1)
        weights = self.drop(F.softmax(F.additive_mask(scores, mask), axis=-1))
        gathered = take_along(broadcast_to(reshape(v, (b, h, 1, sk, dh)), (b, h, sq, sk, dh)),
                              np.broadcast_to(order[..., None], (b, h, sq, sk, dh)), axis=3)
        return tsum(reshape(weights, (b, h, sq, sk, 1)) * gathered, axis=3)

    def forward(self, x: Tensor, memory: Tensor | None = None, allowed: np.ndarray | None = None,
                causal: bool = False) -> Tensor:
        if x.ndim != 3:
            raise ConfigurationError(f"attention expects [batch, seq, d_model], got {x.shape}")
        source = x if memory is None else memory
        b, sq, d = x.shape
        sk = source.shape[1]
        if source.shape[0] != b:
            raise ConfigurationError("query and memory batch sizes differ")
        q = self._split(self.q(x))
        k = self._split(self.k(source))
        v = self._split(self.v(source))

        mask = np.ones((b, self.num_heads, sq, sk), dtype=bool)
        if allowed is not None:
            allowed = np.asarray(allowed, dtype=bool)
            try:
                mask = mask & np.broadcast_to(allowed, mask.shape)
            except ValueError as exc:
                raise ConfigurationError(f"mask shape {allowed.shape} incompatible with {mask.shape}") from exc
        if causal:
            mask = mask & np.tril(np.ones((sq, sk), dtype=bool), k=sk - sq)

        scale = 1.0 / math.sqrt(self.head_dim)
        if x.dtype == np.float64:
            mixed = self._exact_mix(q, k, v, mask, scale)
        else:
            scores = matmul(q, transpose(k, (0, 1, 3, 2))) * scale
            weights = self.drop(F.softmax(F.additive_mask(scores, mask), axis=-1))
            mixed = matmul(weights, v)
        merged = reshape(transpose(mixed, (0, 2, 1, 3)), (b, sq, d))
        return self.out(merged)


class TransformerBlock(Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""

    def __init__(self, cfg: AttentionConfig, rng, dtype=np.float64, cross: bool = False,
                 d_memory: int | None = None):
        d = cfg.model_dim
        self.ln_self = LayerNorm(d, dtype)
        self.attn = MultiHeadAttention(d, cfg.num_heads, rng, cfg.dropout_rate, dtype)
        self.cross = None
        if cross:
            self.ln_cross = LayerNorm(d, dtype)
            self.cross = MultiHeadAttention(d, cfg.num_heads, rng, cfg.dropout_rate, dtype, d_memory)
        self.ln_ff = LayerNorm(d, dtype)
        self.ff = FeedForward(d, cfg.ff_mult * d, rng, dtype)
        self.drop = Dropout(cfg.dropout_rate)
        self.causal = cfg.causal

    def forward(self, x, allowed=None, memory=None, memory_allowed=None):
        x = x + self.drop(self.attn(self.ln_self(x), allowed=allowed, causal=self.causal))
        if self.cross is not None and memory is not None:
            x = x + self.drop(self.cross(self.ln_cross(x), memory=memory, allowed=memory_allowed))
        return x + self.drop(self.ff(self.ln_ff(x)))


class AttentionStack(Module):
    """``num_layers`` transformer blocks followed by a final layer norm."""

    def __init__(self, cfg: AttentionConfig, rng, dtype=np.float64, cross: bool = False,
                 d_memory: int | None = None):
        self.cfg = cfg
        self.blocks = [TransformerBlock(cfg, rng, dtype, cross, d_memory) for _ in range(cfg.num_layers)]
        self.ln_final = LayerNorm(cfg.model_dim, dtype)

    def forward(self, x, allowed=None, memory=None, memory_allowed=None):
        if self.cfg.use_positional_encoding:
            x = x + Tensor(sinusoidal_positions(x.shape[1], x.shape[2], x.dtype))
        for block in self.blocks:
            x = block(x, allowed, memory, memory_allowed)
        return self.ln_final(x)


def forward_attention(x: Tensor, cfg: AttentionConfig, mask: np.ndarray | None = None,
                      stack: AttentionStack | None = None, seed: int = 0) -> Tensor:
    """Run ``x`` through an attention stack built from ``cfg``.

    ``mask`` is a boolean "may attend" array broadcastable to
    ``[batch, heads, seq, seq]``.  A fresh stack is initialised from ``seed``
    when none is supplied.
    """
    if x.ndim != 3 or x.shape[1] < 1 or x.shape[2] != cfg.model_dim:
        raise ConfigurationError(f"input shape {x.shape} does not match model_dim {cfg.model_dim}")
    if stack is None:
        stack = AttentionStack(cfg, np.random.default_rng(seed), x.dtype)
    return stack(x, allowed=mask)


class LSTMCell(Module):
    """Standard LSTM cell with gate order (input, forget, candidate, output)."""

    def __init__(self, d_in: int, hidden: int, rng, dtype=np.float64):
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.weight = parameter(uniform_init(rng, (d_in + hidden, 4 * hidden), bound, dtype))
        self.bias = parameter(np.zeros(4 * hidden, dtype=dtype))

    def initial_state(self, batch: int, dtype=np.float64):
        zero = Tensor(np.zeros((batch, self.hidden), dtype=dtype))
        return zero, zero

    def forward(self, state, x: Tensor):
        h, c = state
        z = F.linear(concat([x, h], axis=-1), self.weight, self.bias)
        n = self.hidden
        i = sigmoid(z[:, :n])
        f = sigmoid(z[:, n:2 * n])
        g = tanh(z[:, 2 * n:3 * n])
        o = sigmoid(z[:, 3 * n:])
        c_next = f * c + i * g
        h_next = o * tanh(c_next)
        return h_next, c_next, h_next


def lstm_step(cell: LSTMCell, state, x: Tensor):
    """One LSTM update; returns ``(h', c', output)``."""
    return cell(state, x)
