"""Position-free causal transformer over shuffled outfit sequences."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..catalog import STOP
from ..nn import AttentionConfig, AttentionStack, Tensor, concat, parameter
from ..nn import functional as F
from ..nn.tensor import broadcast_to
from .base import Example, ItemInput, OutfitModel, QuestionnaireEncoder, TiedHead, flat_rows, pad


class GPTModel(OutfitModel):
    """Decoder-only transformer without positional encoding.

    Position 0 holds a learned start vector, or the embedded questionnaire
    for the contextual variant; it conditions the sequence but is never a
    prediction target.  Training sequences are random permutations of the
    outfit so that prefixes behave like sets.
    """

    kind = "autoregressive"

    def __init__(self, config, vocab, catalog, seed: int):
        super().__init__(config, vocab, catalog, seed)
        rng, dt, d = self._init_rng, self.dtype, config.d_model
        self.inp = ItemInput(self.featurizer, d, rng, dt)
        self.contextual = config.context_mode == "questionnaire"
        if self.contextual:
            self.context_encoder = QuestionnaireEncoder(d, rng, dt)
        else:
            self.start = parameter(rng.normal(0, 0.1, (1, 1, d)).astype(dt))
        self.attn_cfg = AttentionConfig(d, config.num_heads, config.num_layers, config.dropout, causal=True)
        self.decoder = AttentionStack(self.attn_cfg, rng, dt)
        self.head = TiedHead(self.featurizer, d, len(vocab), rng, dt, self.support(True), config.head_init)

    def _first(self, contexts, batch: int) -> Tensor:
        if self.contextual:
            if contexts is None or any(c is None for c in contexts):
                raise ValueError("contextual model needs a questionnaire for every sequence")
            enc = self.context_encoder(contexts)
            return enc.reshape(batch, 1, -1)
        return broadcast_to(self.start, (batch, 1, self.start.shape[-1]))

    def hidden(self, rows_list: Sequence[np.ndarray], contexts=None):
        """States for ``[first, x_1 .. x_n]``; returns (h, valid mask)."""
        batch = len(rows_list)
        rows, mask = pad(list(rows_list))
        first = self._first(contexts, batch)
        if rows.shape[1]:
            seq = concat([first, self.inp(self.item_features(rows))], axis=1)
        else:
            seq = first
        valid = np.concatenate([np.ones((batch, 1), bool), mask], axis=1)
        self.forward_passes += 1
        return self.decoder(seq, allowed=valid[:, None, None, :]), valid

    def _sequence_logits(self, rows_list, contexts):
        h, valid = self.hidden(rows_list, contexts)
        table = self.head_table(self.head)
        return self.head.logits(flat_rows(h, valid), table), valid

    @staticmethod
    def _targets(targets_list, valid):
        out = np.zeros(valid.shape, dtype=np.int64)
        for i, t in enumerate(targets_list):
            out[i, : len(t)] = t
            out[i, len(t)] = STOP
        return out[valid]

    def loss(self, batch: Sequence[Example], rng) -> Tensor:
        rows_list, targets_list = [], []
        for ex in batch:
            perm = rng.permutation(len(ex.rows))
            rows_list.append(ex.rows[perm])
            targets_list.append(ex.targets[perm])
        contexts = [ex.context for ex in batch] if self.contextual else None
        logits, valid = self._sequence_logits(rows_list, contexts)
        targets, weights = self.target_weights(self._targets(targets_list, valid), np.ones(int(valid.sum()), bool))
        return F.cross_entropy(logits, targets, weights)

    def gpt_loss(self, example: Example, order: np.ndarray | None = None) -> Tensor:
        """Mean next-item NLL of one outfit in the given order."""
        order = np.arange(len(example.rows)) if order is None else np.asarray(order)
        ctx = [example.context] if self.contextual else None
        logits, valid = self._sequence_logits([example.rows[order]], ctx)
        targets, weights = self.target_weights(self._targets([example.targets[order]], valid),
                                               np.ones(int(valid.sum()), bool))
        return F.cross_entropy(logits, targets, weights)

    # --- scoring ---------------------------------------------------------
    def next_log_probs(self, prefixes: Sequence[np.ndarray], contexts=None, direction: str = "forward"):
        h, valid = self.hidden(prefixes, contexts)
        last = valid.sum(axis=1) - 1
        rows = h.data[np.arange(len(prefixes)), last]
        logits = self.head.logits(Tensor(rows), self.head_table(self.head)).data
        return F.log_softmax_array(logits.astype(np.float64))

    def sequence_nll(self, rows_list, targets_list, contexts=None) -> list[np.ndarray]:
        """Per-position NLL for ``x_1 .. x_n`` then STOP (UNK positions give NaN)."""
        logits, valid = self._sequence_logits(rows_list, contexts)
        logp = F.log_softmax_array(logits.data.astype(np.float64))
        tgt = self._targets(targets_list, valid)
        picked = -logp[np.arange(len(tgt)), np.maximum(tgt, 0)]
        picked[tgt < 0] = np.nan
        out, start = [], 0
        for t in targets_list:
            out.append(picked[start:start + len(t) + 1])
            start += len(t) + 1
        return out
