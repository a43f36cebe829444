"""Encoder-decoder transformer conditioned on a user's action sequence."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..catalog import STOP
from ..errors import InputError
from ..nn import AttentionConfig, AttentionStack, Linear, Tensor
from ..nn import functional as F
from .base import Example, ItemInput, OutfitModel, TiedHead, action_features, flat_rows, pad


class TransformerModel(OutfitModel):
    """Actions are encoded without causal masking; the outfit decoder is causal.

    The decoder starts from the anchor item and predicts the remaining items
    (in random order during training) followed by STOP, attending to the
    encoded actions through cross-attention.  Encoder and decoder share the
    item featurizer, i.e. one set of attribute embeddings.
    """

    kind = "autoregressive"

    def __init__(self, config, vocab, catalog, seed: int):
        super().__init__(config, vocab, catalog, seed)
        rng, dt, d = self._init_rng, self.dtype, config.d_model
        self.inp = ItemInput(self.featurizer, d, rng, dt)
        self.action_proj = Linear(self.featurizer.output_dim + 4, d, rng, dtype=dt)
        enc_cfg = AttentionConfig(d, config.num_heads, config.num_layers, config.dropout, causal=False)
        dec_cfg = AttentionConfig(d, config.num_heads, config.num_layers, config.dropout, causal=True)
        self.encoder = AttentionStack(enc_cfg, rng, dt)
        self.decoder = AttentionStack(dec_cfg, rng, dt, cross=True)
        self.head = TiedHead(self.featurizer, d, len(vocab), rng, dt, self.support(True), config.head_init)
        self.ablate_encoder = False

    def encode(self, contexts):
        for c in contexts:
            if c is None or len(c.rows) == 0:
                raise InputError("empty action sequence")
        feats, mask = action_features(contexts, self.featurizer, self.catalog, self.dtype)
        memory = self.encoder(self.action_proj(feats), allowed=mask[:, None, None, :])
        return memory, mask

    def hidden(self, rows_list: Sequence[np.ndarray], contexts, ablate: bool | None = None):
        """Decoder states for ``[x_1 .. x_n]`` (``x_1`` is the anchor)."""
        ablate = self.ablate_encoder if ablate is None else ablate
        rows, valid = pad(list(rows_list))
        if rows.shape[1] == 0:
            raise InputError("the decoder needs at least the anchor item")
        x = self.inp(self.item_features(rows))
        self.forward_passes += 1
        if ablate:
            return self.decoder(x, allowed=valid[:, None, None, :]), valid
        memory, mmask = self.encode(contexts)
        h = self.decoder(x, allowed=valid[:, None, None, :], memory=memory,
                         memory_allowed=mmask[:, None, None, :])
        return h, valid

    def arrange(self, example: Example, rng=None) -> tuple[np.ndarray, np.ndarray]:
        """Anchor first, the rest shuffled (or canonical when ``rng`` is None)."""
        n = len(example.rows)
        if example.anchor is not None:
            a = example.anchor
        else:
            a = int(rng.integers(n)) if rng is not None else 0
        rest = np.array([i for i in range(n) if i != a], dtype=np.int64)
        if rng is not None:
            rest = rest[rng.permutation(len(rest))]
        order = np.concatenate([[a], rest]).astype(np.int64)
        return example.rows[order], example.targets[order]

    def _logits_and_targets(self, rows_list, targets_list, contexts, ablate=None):
        h, valid = self.hidden(rows_list, contexts, ablate)
        logits = self.head.logits(flat_rows(h, valid), self.head_table(self.head))
        tgt = np.zeros(valid.shape, dtype=np.int64)
        for i, t in enumerate(targets_list):
            tgt[i, : len(t) - 1] = t[1:]
            tgt[i, len(t) - 1] = STOP
        return logits, tgt[valid]

    def loss(self, batch: Sequence[Example], rng, ablate: bool | None = None) -> Tensor:
        arranged = [self.arrange(ex, rng) for ex in batch]
        logits, tgt = self._logits_and_targets([a[0] for a in arranged], [a[1] for a in arranged],
                                               [ex.context for ex in batch], ablate)
        targets, weights = self.target_weights(tgt, np.ones(len(tgt), bool))
        return F.cross_entropy(logits, targets, weights)

    def transformer_loss(self, example: Example, ablate: bool | None = None) -> Tensor:
        if example.context is None or len(example.context.rows) == 0:
            raise InputError("empty action sequence")
        return self.loss([example], None, ablate)

    def next_log_probs(self, prefixes: Sequence[np.ndarray], contexts=None, direction: str = "forward"):
        h, valid = self.hidden(prefixes, contexts)
        last = valid.sum(axis=1) - 1
        rows = h.data[np.arange(len(prefixes)), last]
        logits = self.head.logits(Tensor(rows), self.head_table(self.head)).data
        return F.log_softmax_array(logits.astype(np.float64))

    def sequence_nll(self, rows_list, targets_list, contexts=None) -> list[np.ndarray]:
        """NLL of ``x_2 .. x_n`` then STOP given the first item (the anchor)."""
        logits, tgt = self._logits_and_targets(rows_list, targets_list, contexts)
        logp = F.log_softmax_array(logits.data.astype(np.float64))
        nll = -logp[np.arange(len(tgt)), np.maximum(tgt, 0)]
        nll[tgt < 0] = np.nan
        out, start = [], 0
        for t in targets_list:
            out.append(nll[start:start + len(t)])
            start += len(t)
        return out
