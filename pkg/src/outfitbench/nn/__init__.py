"""Small numpy autodiff engine used by every model family."""

from . import functional
from .layers import (
    AttentionConfig,
    AttentionStack,
    Dropout,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    LSTMCell,
    MLP,
    Module,
    MultiHeadAttention,
    TransformerBlock,
    forward_attention,
    lstm_step,
    parameter,
    sinusoidal_positions,
)
from .optim import ParamStore, optimizer_step
from .tensor import Tensor, concat, grad_enabled, no_grad, stack, take_rows

__all__ = [
    "AttentionConfig", "AttentionStack", "Dropout", "Embedding", "FeedForward", "LayerNorm",
    "Linear", "LSTMCell", "MLP", "Module", "MultiHeadAttention", "ParamStore", "Tensor",
    "TransformerBlock", "concat", "forward_attention", "functional", "grad_enabled",
    "lstm_step", "no_grad", "optimizer_step", "parameter", "sinusoidal_positions",
    "stack", "take_rows",
]
