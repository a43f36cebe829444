"""Bidirectional outfit LSTM and its sequence-to-sequence personalised variant."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..catalog import STOP
from ..errors import InputError
from ..nn import Dropout, Linear, LSTMCell, Tensor, stack
from ..nn import functional as F
from .base import Example, ItemInput, OutfitModel, TiedHead, action_features, flat_rows, pad


def _directional(rows_list, targets_list, direction):
    if direction == "forward":
        return list(rows_list), list(targets_list)
    return [r[::-1] for r in rows_list], [t[::-1] for t in targets_list]


class LSTMModel(OutfitModel):
    """Forward and backward LSTMs over outfits in head-to-toe order.

    Each direction reads ``[0, x_1, .., x_n]`` and predicts
    ``[x_1, .., x_n, STOP]``; the backward model does the same on the
    reversed outfit.  The loss is the sum of the two per-direction means.
    """

    kind = "autoregressive"
    bidirectional = True

    def __init__(self, config, vocab, catalog, seed: int):
        super().__init__(config, vocab, catalog, seed)
        rng, dt = self._init_rng, self.dtype
        d, hdim = config.d_model, config.hidden
        self.inp = ItemInput(self.featurizer, d, rng, dt)
        self.cell_f = LSTMCell(d, hdim, rng, dt)
        self.cell_b = LSTMCell(d, hdim, rng, dt)
        self.head_f = TiedHead(self.featurizer, hdim, len(vocab), rng, dt, self.support(True), config.head_init)
        self.head_b = TiedHead(self.featurizer, hdim, len(vocab), rng, dt, self.support(True), config.head_init)
        self.drop = Dropout(config.dropout)

    def initial_state(self, batch: int, contexts=None, direction: str = "forward"):
        cell = self.cell_f if direction == "forward" else self.cell_b
        return cell.initial_state(batch, self.dtype)

    def _run(self, rows_list, direction: str, contexts=None):
        """Hidden outputs for every step of ``[0, x_1 .. x_n]``; returns (H, valid)."""
        cell = self.cell_f if direction == "forward" else self.cell_b
        batch = len(rows_list)
        rows, mask = pad(list(rows_list))
        state = self.initial_state(batch, contexts, direction)
        zero = Tensor(np.zeros((batch, self.config.d_model), dtype=self.dtype))
        x = self.inp(self.item_features(rows)) if rows.shape[1] else None
        outputs = []
        h, c = state
        for t in range(rows.shape[1] + 1):
            step_in = zero if t == 0 else x[:, t - 1, :]
            h, c, out = cell((h, c), step_in)
            outputs.append(self.drop(out))
        self.forward_passes += 1
        valid = np.concatenate([np.ones((batch, 1), bool), mask], axis=1)
        return stack(outputs, axis=1), valid

    def _direction_loss(self, rows_list, targets_list, direction, contexts=None) -> Tensor:
        rows_list, targets_list = _directional(rows_list, targets_list, direction)
        head = self.head_f if direction == "forward" else self.head_b
        hseq, valid = self._run(rows_list, direction, contexts)
        logits = head.logits(flat_rows(hseq, valid), self.head_table(head))
        tgt = np.zeros(valid.shape, dtype=np.int64)
        for i, t in enumerate(targets_list):
            tgt[i, : len(t)] = t
            tgt[i, len(t)] = STOP
        targets, weights = self.target_weights(tgt[valid], np.ones(int(valid.sum()), bool))
        return F.cross_entropy(logits, targets, weights)

    def _contexts(self, batch):
        return None

    def loss(self, batch: Sequence[Example], rng) -> Tensor:
        rows = [ex.rows for ex in batch]
        targets = [ex.targets for ex in batch]
        ctx = self._contexts(batch)
        return (self._direction_loss(rows, targets, "forward", ctx)
                + self._direction_loss(rows, targets, "backward", ctx))

    def lstm_loss(self, example: Example) -> Tensor:
        if len(example.rows) < 2:
            raise InputError("LSTM loss needs a sequence of at least two items")
        return self.loss([example], None)

    # --- scoring ---------------------------------------------------------
    def next_log_probs(self, prefixes: Sequence[np.ndarray], contexts=None, direction: str = "forward"):
        """Next-token distribution after ``prefixes`` read in ``direction`` order.

        For the backward model the prefix is given in reading order, i.e.
        already reversed (toe to head).
        """
        head = self.head_f if direction == "forward" else self.head_b
        hseq, valid = self._run(prefixes, direction, contexts)
        last = valid.sum(axis=1) - 1
        rows = hseq.data[np.arange(len(prefixes)), last]
        logits = head.logits(Tensor(rows), self.head_table(head)).data
        return F.log_softmax_array(logits.astype(np.float64))

    def direction_nll(self, rows_list, targets_list, direction: str, contexts=None) -> list[np.ndarray]:
        """Per-position NLL in ``direction`` reading order (items then STOP)."""
        rows_list, targets_list = _directional(rows_list, targets_list, direction)
        head = self.head_f if direction == "forward" else self.head_b
        hseq, valid = self._run(rows_list, direction, contexts)
        logp = F.log_softmax_array(head.logits(flat_rows(hseq, valid), self.head_table(head)).data.astype(np.float64))
        out, start = [], 0
        for t in targets_list:
            tgt = np.append(t, STOP)
            block = logp[start:start + len(tgt)]
            nll = -block[np.arange(len(tgt)), np.maximum(tgt, 0)]
            nll[tgt < 0] = np.nan
            out.append(nll)
            start += len(tgt)
        return out

    def sequence_nll(self, rows_list, targets_list, contexts=None) -> list[np.ndarray]:
        """Forward-direction per-position NLL (canonical order, items then STOP)."""
        return self.direction_nll(rows_list, targets_list, "forward", contexts)


class Seq2SeqLSTMModel(LSTMModel):
    """LSTM encoder over the action sequence whose final state seeds both decoders."""

    def __init__(self, config, vocab, catalog, seed: int):
        super().__init__(config, vocab, catalog, seed)
        rng, dt = self._init_rng, self.dtype
        d, hdim = config.d_model, config.hidden
        self.action_proj = Linear(self.featurizer.output_dim + 4, d, rng, dtype=dt)
        self.encoder = LSTMCell(d, hdim, rng, dt)
        self.use_encoder = True

    def encode(self, contexts):
        for c in contexts:
            if c is None or len(c.rows) == 0:
                raise InputError("empty action sequence")
        feats, mask = action_features(contexts, self.featurizer, self.catalog, self.dtype)
        x = self.action_proj(feats)
        batch = len(contexts)
        h, c = self.encoder.initial_state(batch, self.dtype)
        for t in range(x.shape[1]):
            h_new, c_new, _ = self.encoder((h, c), x[:, t, :])
            keep = Tensor(mask[:, t:t + 1].astype(self.dtype))
            h = h_new * keep + h * (1.0 - keep)
            c = c_new * keep + c * (1.0 - keep)
        return h, c

    def initial_state(self, batch: int, contexts=None, direction: str = "forward"):
        if contexts is None or not self.use_encoder:
            return super().initial_state(batch, contexts, direction)
        return self.encode(contexts)

    def _contexts(self, batch):
        return [ex.context for ex in batch]

    def s2s_lstm_loss(self, example: Example, use_encoder: bool = True) -> Tensor:
        prev = self.use_encoder
        self.use_encoder = use_encoder
        try:
            return self.loss([example], None)
        finally:
            self.use_encoder = prev
