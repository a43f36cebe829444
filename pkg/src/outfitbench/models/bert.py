"""Position-free bidirectional transformer trained to fill one masked slot."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import UsageError
from ..nn import AttentionConfig, AttentionStack, Tensor, concat, parameter
from ..nn import functional as F
from ..nn.tensor import broadcast_to, take_rows
from .base import Example, ItemInput, OutfitModel, QuestionnaireEncoder, TiedHead, pad


class BERTModel(OutfitModel):
    """Encoder-only transformer; one position per outfit is replaced by a mask vector.

    The contextual variant appends the embedded questionnaire as an extra
    token.  That token is visible to every item but can never be masked.
    """

    kind = "masked"

    def __init__(self, config, vocab, catalog, seed: int):
        super().__init__(config, vocab, catalog, seed)
        rng, dt, d = self._init_rng, self.dtype, config.d_model
        self.inp = ItemInput(self.featurizer, d, rng, dt)
        self.mask_vec = parameter(rng.normal(0, 0.1, (d,)).astype(dt))
        self.contextual = config.context_mode == "questionnaire"
        if self.contextual:
            self.context_encoder = QuestionnaireEncoder(d, rng, dt)
        self.attn_cfg = AttentionConfig(d, config.num_heads, config.num_layers, config.dropout, causal=False)
        self.encoder = AttentionStack(self.attn_cfg, rng, dt)
        self.head = TiedHead(self.featurizer, d, len(vocab), rng, dt, self.support(False), config.head_init)

    def masked_hidden(self, rows_list: Sequence[np.ndarray], positions: Sequence[int], contexts=None) -> Tensor:
        """Encoder state at each sequence's masked position, shape ``[B, d]``."""
        batch = len(rows_list)
        rows, valid = pad(list(rows_list))
        onehot = np.zeros(rows.shape + (1,), dtype=self.dtype)
        onehot[np.arange(batch), np.asarray(positions), 0] = 1.0
        x = self.inp(self.item_features(rows))
        d = x.shape[-1]
        x = x * Tensor(1.0 - onehot) + broadcast_to(self.mask_vec, x.shape) * Tensor(onehot)
        if self.contextual:
            if contexts is None or any(c is None for c in contexts):
                raise ValueError("contextual model needs a questionnaire for every outfit")
            ctx = self.context_encoder(contexts).reshape(batch, 1, d)
            x = concat([x, ctx], axis=1)
            valid = np.concatenate([valid, np.ones((batch, 1), bool)], axis=1)
        self.forward_passes += 1
        h = self.encoder(x, allowed=valid[:, None, None, :])
        length = h.shape[1]
        flat = np.arange(batch) * length + np.asarray(positions)
        return take_rows(h.reshape(batch * length, d), flat)

    def loss(self, batch: Sequence[Example], rng) -> Tensor:
        positions = [int(rng.integers(len(ex.rows))) for ex in batch]
        contexts = [ex.context for ex in batch] if self.contextual else None
        h = self.masked_hidden([ex.rows for ex in batch], positions, contexts)
        logits = self.head.logits(h, self.head_table(self.head))
        raw = np.array([ex.targets[p] for ex, p in zip(batch, positions)])
        targets, weights = self.target_weights(raw, np.ones(len(batch), bool))
        return F.cross_entropy(logits, targets, weights)

    def bert_loss(self, example: Example, mask_position: int) -> Tensor:
        """NLL of the true item at ``mask_position`` given all other items."""
        n = len(example.rows)
        if self.contextual and mask_position == n:
            raise UsageError("the context token cannot be masked")
        if not 0 <= mask_position < n:
            raise UsageError(f"mask position {mask_position} outside the outfit")
        ctx = [example.context] if self.contextual else None
        h = self.masked_hidden([example.rows], [mask_position], ctx)
        logits = self.head.logits(h, self.head_table(self.head))
        target, weight = self.target_weights(example.targets[[mask_position]], np.ones(1, bool))
        return F.cross_entropy(logits, target, weight)

    def masked_log_probs(self, visible: Sequence[np.ndarray], contexts=None) -> np.ndarray:
        """Distribution for one extra masked slot next to the visible items."""
        rows_list = [np.append(np.asarray(v, dtype=np.int64), 0) for v in visible]
        positions = [len(v) for v in visible]
        h = self.masked_hidden(rows_list, positions, contexts)
        logits = self.head.logits(h, self.head_table(self.head)).data
        return F.log_softmax_array(logits.astype(np.float64))

    def slot_log_probs(self, rows: np.ndarray, position: int, context=None) -> np.ndarray:
        """Distribution at ``position`` of a full outfit with that slot masked."""
        ctx = [context] if self.contextual else None
        h = self.masked_hidden([rows], [position], ctx)
        logits = self.head.logits(h, self.head_table(self.head)).data
        return F.log_softmax_array(logits.astype(np.float64))[0]
