"""Generalised Siamese compatibility network with one subnet per category."""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from ..catalog import CATEGORIES, Outfit
from ..errors import ConfigurationError
from ..nn import MLP, Tensor, concat, parameter
from ..nn import functional as F
from ..nn.tensor import sigmoid, take_rows
from ..synthgen import negative_sample
from .base import Example, OutfitModel

PAIRS = list(itertools.combinations(range(len(CATEGORIES)), 2))
_I = np.array([i for i, _ in PAIRS])
_J = np.array([j for _, j in PAIRS])
PAIR_INDEX = {pair: k for k, pair in enumerate(PAIRS)}


def interaction_vector(x: Tensor, y: Tensor) -> Tensor:
    """``[x, y, (x - y)^2, x * y]`` for a pair of encodings."""
    return F.interaction(x, y)


class SiameseModel(OutfitModel):
    """Category subnets feeding an interaction vector and a small classifier.

    Each category has its own two-layer ReLU subnet (no weight sharing).  An
    outfit fills one slot per category with the mean encoding of its items
    in that category, or a learned null vector when the category is absent.
    The classifier sees all slots, their pairwise squared differences and
    pairwise products.  A pair head over ``[x, y, (x-y)^2, x*y]`` is trained
    alongside for item-pair scoring.
    """

    kind = "discriminative"

    def __init__(self, config, vocab, catalog, seed: int):
        super().__init__(config, vocab, catalog, seed)
        rng, dt, w = self._init_rng, self.dtype, config.siamese_width
        fd = self.featurizer.output_dim
        self.width = w
        self.subnets = [MLP([fd, w, w], rng, dt) for _ in CATEGORIES]
        self.null = parameter(rng.normal(0, 0.1, (len(CATEGORIES), w)).astype(dt))
        n = len(CATEGORIES)
        self.classifier = MLP([n * w + 2 * len(PAIRS) * w, w, w, 1], rng, dt, final_relu=False)
        self.pair_head = MLP([4 * w, w, w, 1], rng, dt, final_relu=False)

    # --- encodings -------------------------------------------------------
    def encode_items(self, rows: np.ndarray) -> Tensor:
        """Category-specific encodings of catalog rows, shape ``[N, w]``."""
        rows = np.asarray(rows, dtype=np.int64)
        cats = self.catalog.codes[rows, 0]
        feats = self.item_features(rows)
        parts, order = [], []
        for c in range(len(CATEGORIES)):
            idx = np.flatnonzero(cats == c)
            if len(idx):
                parts.append(self.subnets[c](take_rows(feats, idx)))
                order.append(idx)
        enc = concat(parts, axis=0)
        inverse = np.empty(len(rows), dtype=np.int64)
        inverse[np.concatenate(order)] = np.arange(len(rows))
        return take_rows(enc, inverse)

    def slots(self, rows_list: Sequence[np.ndarray]) -> Tensor:
        """Slot matrix ``[B, |categories|, w]``."""
        for rows in rows_list:
            for c in self.catalog.codes[np.asarray(rows, dtype=np.int64), 0]:
                if not 0 <= c < len(self.subnets):
                    raise ConfigurationError(f"no subnet for category code {c}")
        batch = len(rows_list)
        flat = np.concatenate([np.asarray(r, dtype=np.int64) for r in rows_list])
        owner = np.repeat(np.arange(batch), [len(r) for r in rows_list])
        enc = self.encode_items(flat)
        cats = self.catalog.codes[flat, 0]
        ncat = len(CATEGORIES)
        counts = np.zeros((batch, ncat))
        np.add.at(counts, (owner, cats), 1.0)
        assign = np.zeros((batch * ncat, len(flat)), dtype=self.dtype)
        assign[owner * ncat + cats, np.arange(len(flat))] = 1.0 / counts[owner, cats]
        summed = (Tensor(assign) @ enc).reshape(batch, ncat, self.width)
        empty = (counts == 0).astype(self.dtype)[..., None]
        return summed + Tensor(empty) * self.null

    def features(self, slots: Tensor) -> Tensor:
        b = slots.shape[0]
        a = slots[:, _I, :]
        c = slots[:, _J, :]
        diff = a - c
        return concat([slots.reshape(b, -1), (diff * diff).reshape(b, -1), (a * c).reshape(b, -1)], axis=-1)

    def outfit_logits(self, rows_list: Sequence[np.ndarray]) -> Tensor:
        return self.classifier(self.features(self.slots(rows_list))).reshape(-1)

    def outfit_scores(self, rows_list: Sequence[np.ndarray]) -> np.ndarray:
        """Compatibility probability of each outfit."""
        return sigmoid(self.outfit_logits(rows_list)).data.astype(np.float64)

    def pair_logits(self, a_rows, b_rows) -> Tensor:
        enc = self.encode_items(np.concatenate([a_rows, b_rows]))
        n = len(a_rows)
        return self.pair_head(interaction_vector(enc[:n], enc[n:])).reshape(-1)

    def pair_scores(self, a_rows, b_rows) -> np.ndarray:
        return sigmoid(self.pair_logits(np.asarray(a_rows), np.asarray(b_rows))).data.astype(np.float64)

    # --- training --------------------------------------------------------
    def loss(self, batch: Sequence[Example], rng) -> Tensor:
        pos = [ex.rows for ex in batch]
        neg = []
        pa, pb, na, nb = [], [], [], []
        ids = [it.item_id for it in self.catalog.items]
        for ex in batch:
            outfit = Outfit(tuple(ids[r] for r in ex.rows))
            corrupted = negative_sample(outfit, self.catalog, rng=rng)
            neg_rows = self.catalog.indices(corrupted.items)
            neg.append(neg_rows)
            i, j = rng.choice(len(ex.rows), size=2, replace=False)
            pa.append(ex.rows[i])
            pb.append(ex.rows[j])
            changed = np.flatnonzero(neg_rows != ex.rows)
            k = int(changed[rng.integers(len(changed))])
            others = [m for m in range(len(ex.rows)) if m != k]
            na.append(neg_rows[k])
            nb.append(ex.rows[others[rng.integers(len(others))]])
        logits = self.outfit_logits(pos + neg)
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        pair = self.pair_logits(np.array(pa + na), np.array(pb + nb))
        return F.bce_with_logits(logits, labels) + F.bce_with_logits(pair, labels)

    # --- fill in the blank ----------------------------------------------
    def candidate_scores(self, context_rows: np.ndarray, candidate_rows: np.ndarray,
                         candidate_enc: np.ndarray | None = None) -> np.ndarray:
        """Outfit logit of ``context + [candidate]`` for every candidate."""
        return self.completion_scores([context_rows], candidate_rows, candidate_enc)[0]

    def _context_slots(self, contexts):
        ncat, w = len(CATEGORIES), self.width
        sums = np.zeros((len(contexts), ncat, w))
        counts = np.zeros((len(contexts), ncat))
        nonempty = [i for i, c in enumerate(contexts) if len(c)]
        if nonempty:
            flat = np.concatenate([np.asarray(contexts[i], dtype=np.int64) for i in nonempty])
            owner = np.repeat(nonempty, [len(contexts[i]) for i in nonempty])
            cats = self.catalog.codes[flat, 0]
            np.add.at(sums, (owner, cats), self.encode_items(flat).data)
            np.add.at(counts, (owner, cats), 1.0)
        base = np.where(counts[..., None] > 0, sums / np.maximum(counts, 1)[..., None], self.null.data)
        return sums, counts, base

    def completion_scores(self, contexts: Sequence[np.ndarray], candidate_rows: np.ndarray,
                          candidate_enc: np.ndarray | None = None) -> np.ndarray:
        """Outfit logits ``[len(contexts), len(candidates)]`` of each partial outfit plus one candidate.

        Adding a candidate changes one slot only, so the classifier's first
        (linear) layer splits into the context's own pre-activation plus a
        correction that is linear and quadratic in the new slot value.
        """
        ncat, w = len(CATEGORIES), self.width
        candidate_rows = np.asarray(candidate_rows, dtype=np.int64)
        if candidate_enc is None:
            candidate_enc = self.encode_items(candidate_rows).data
        enc = np.asarray(candidate_enc, dtype=np.float64)
        cand_cat = self.catalog.codes[candidate_rows, 0]
        sums, counts, base = self._context_slots(contexts)
        first = self.classifier.layers[0]
        weight = first.weight.data.astype(np.float64)
        h = weight.shape[1]
        npair = len(PAIRS)
        w_slot = weight[: ncat * w].reshape(ncat, w, h)
        w_diff = weight[ncat * w: (ncat + npair) * w].reshape(npair, w, h)
        w_prod = weight[(ncat + npair) * w:].reshape(npair, w, h)
        pre_base = self.features(Tensor(base)).data @ weight + first.bias.data
        out = np.empty((len(contexts), len(candidate_rows)))
        for c in np.unique(cand_cat):
            pick = np.flatnonzero(cand_cat == c)
            others = [(j, PAIR_INDEX[min(c, j), max(c, j)]) for j in range(ncat) if j != c]
            quad = sum(w_diff[p] for _, p in others)                       # [w, h]
            lin = w_slot[c] + sum(base[:, j, :, None] * (w_prod[p] - 2 * w_diff[p]) for j, p in others)
            old = base[:, c]
            pre = pre_base - (old[:, None] @ lin)[:, 0] - (old * old) @ quad
            r = 1.0 / (counts[:, c] + 1.0)                                 # [B]
            e = enc[pick]
            sc = sums[:, c]
            lin_term = sc[:, None] @ lin + e @ lin                         # [B, M, h]
            quad_term = (((sc * sc) @ quad)[:, None] + 2 * (e @ (sc[:, :, None] * quad))
                         + ((e * e) @ quad)[None])
            z = pre[:, None] + r[:, None, None] * lin_term + (r * r)[:, None, None] * quad_term
            out[:, pick] = self._classifier_tail(z)
        return out

    def _classifier_tail(self, z: np.ndarray) -> np.ndarray:
        """Remaining classifier layers applied to first-layer pre-activations."""
        layers = self.classifier.layers
        for layer in layers[1:]:
            z = np.maximum(z, 0.0) @ layer.weight.data.astype(np.float64) + layer.bias.data
        return z[..., 0]

    def completion_scores_direct(self, contexts: Sequence[np.ndarray], candidate_rows: np.ndarray,
                                 candidate_enc: np.ndarray | None = None, chunk: int = 8192) -> np.ndarray:
        """Reference route for :meth:`completion_scores`: build every completed slot matrix."""
        candidate_rows = np.asarray(candidate_rows, dtype=np.int64)
        if candidate_enc is None:
            candidate_enc = self.encode_items(candidate_rows).data
        cand_cat = self.catalog.codes[candidate_rows, 0]
        sums, counts, base = self._context_slots(contexts)
        m = len(candidate_rows)
        pairs = len(contexts) * m
        out = np.empty(pairs)
        for lo in range(0, pairs, chunk):
            sel = np.arange(lo, min(pairs, lo + chunk))
            ctx, cand = sel // m, sel % m
            slots = base[ctx].copy()
            cc = cand_cat[cand]
            slots[np.arange(len(sel)), cc] = ((sums[ctx, cc] + candidate_enc[cand])
                                              / (counts[ctx, cc] + 1)[:, None])
            feats = self.features(Tensor(slots.astype(self.dtype)))
            out[sel] = self.classifier(feats).data.reshape(-1)
        return out.reshape(len(contexts), m)
