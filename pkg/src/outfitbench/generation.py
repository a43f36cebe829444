"""Outfit construction: sampling, beam search, Gibbs sampling and nearest-neighbour ranking.

The search procedures are written against a small token-level interface so
that they run unchanged on trained models and on hand-built toy models:

* ``num_tokens`` and ``token_rows`` (input row of every output token, -1
  for the reserved tokens);
* ``next_log_probs(prefixes, contexts, direction)`` for left-to-right
  models, where prefixes are arrays of input rows;
* ``slot_log_probs(states, positions, contexts)`` for masked models.

:class:`ModelScorer` adapts any trained :class:`~outfitbench.models.OutfitModel`.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .catalog import CATEGORIES, MASK, NUM_SPECIAL, STOP, ActionSequence, Catalog, Outfit
from .errors import CandidateLookupError, GenerationError, InputError, RankingError
from .rng import stream

_ACCESSORY = CATEGORIES.index("accessory")


class ModelScorer:
    """Token-level view of a trained model (evaluation mode, no graph)."""

    def __init__(self, model):
        self.model = model
        self.catalog: Catalog = model.catalog
        self.num_tokens = len(model.vocab)
        self.token_rows = np.concatenate([np.full(NUM_SPECIAL, -1), model.vocab_rows]).astype(np.int64)
        self._row_token = {int(r): t for t, r in enumerate(self.token_rows) if r >= 0}

    @property
    def forward_passes(self) -> int:
        return self.model.forward_passes

    def token_of_row(self, row: int) -> int:
        return self._row_token.get(int(row), -1)

    def next_log_probs(self, prefixes, contexts=None, direction="forward"):
        return self.model.next_log_probs(list(prefixes), contexts, direction)

    def slot_log_probs(self, states: np.ndarray, positions: np.ndarray, contexts=None) -> np.ndarray:
        from .nn import functional as F
        m = self.model
        h = m.masked_hidden(list(states), list(positions), contexts)
        logits = m.head.logits(h, m.head_table(m.head)).data
        return F.log_softmax_array(logits.astype(np.float64))


@contextlib.contextmanager
def _scoring(model):
    """Yield a token-level scorer; trained models run frozen inside the block."""
    if hasattr(model, "inference") and hasattr(model, "vocab"):
        with model.inference():
            yield ModelScorer(model)
    else:
        yield model


def _token_of_row(scorer, row: int) -> int:
    if hasattr(scorer, "token_of_row"):
        return scorer.token_of_row(row)
    hits = np.flatnonzero(scorer.token_rows == row)
    return int(hits[0]) if len(hits) else -1


def _seed_rows(model, seed_items) -> np.ndarray:
    """Catalog rows of seed item ids (or rows, for token-level toy models)."""
    if hasattr(model, "catalog") and hasattr(model, "vocab"):
        missing = [s for s in seed_items if s not in model.catalog]
        if missing:
            raise InputError(f"seed items not in the catalog: {missing}")
        return model.catalog.indices(seed_items)
    return np.asarray(list(seed_items), dtype=np.int64)


def _contexts(context, batch: int):
    return None if context is None else [context] * batch


def _item_mask(scorer) -> np.ndarray:
    """Tokens that may appear as outfit items."""
    ok = scorer.token_rows >= 0
    ok[:NUM_SPECIAL] = False
    return ok


@dataclass
class _Constraints:
    """Per-step filtering shared by sampling and beam search."""

    min_len: int = 2
    max_len: int = 7
    fixed_length: int | None = None
    exclude_duplicates: bool = True
    category_cap: bool = False

    def target_length(self) -> int:
        return self.fixed_length if self.fixed_length is not None else self.max_len

    def allowed(self, scorer, rows: Sequence[int], base: np.ndarray) -> np.ndarray:
        ok = base.copy()
        if self.exclude_duplicates and len(rows):
            taken = np.isin(scorer.token_rows, np.asarray(rows))
            ok &= ~taken
        if self.category_cap and len(rows):
            codes = scorer.catalog.codes
            used = set(int(c) for c in codes[np.asarray(rows), 0]) - {_ACCESSORY}
            cats = np.where(scorer.token_rows >= 0, codes[np.maximum(scorer.token_rows, 0), 0], -1)
            ok &= ~np.isin(cats, list(used))
        n = len(rows)
        may_stop = n >= self.min_len and (self.fixed_length is None or n >= self.fixed_length)
        ok[STOP] = may_stop
        ok[MASK] = False
        return ok


def _check_lengths(c: _Constraints, n_seeds: int):
    if c.max_len < 1 or c.target_length() > 7:
        raise InputError("outfits hold at most 7 items")
    if c.fixed_length is not None and c.fixed_length < max(n_seeds, 1):
        raise InputError("fixed length shorter than the seed")
    if n_seeds > c.target_length():
        raise InputError("more seed items than max_len")


# ------------------------------------------------------------------ sampling
def _choose(logp: np.ndarray, ok: np.ndarray, temperature: float, rng) -> int:
    if not ok.any():
        raise GenerationError("no admissible token left to generate")
    masked = np.where(ok, logp, -np.inf)
    if temperature == 0:
        return int(np.argmax(masked))
    z = masked / temperature
    z = z - z[ok].max()
    p = np.exp(z)
    p /= p.sum()
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(p) - 1))


def sample_rows(scorer, seeds: Sequence[np.ndarray], contexts=None, *, max_len: int = 7,
                temperature: float = 1.0, rng_seed: int = 0, fixed_lengths: Sequence[int] | None = None,
                min_len: int = 2, exclude_duplicates: bool = True, category_cap: bool = False,
                direction: str = "forward") -> list[list[int]]:
    """Extend every seed (in reading order) one token per forward pass until STOP or the length limit.

    The whole batch advances together, so a batch of outfits of length
    ``n`` built from empty seeds costs ``n + 1`` forward passes.
    """
    if temperature < 0:
        raise InputError("temperature must be non-negative")
    rng = stream(rng_seed, "sample")
    base = _item_mask(scorer)
    if not base.any():
        raise GenerationError("vocabulary has no item tokens")
    cons = [
        _Constraints(min_len, max_len, None if fixed_lengths is None else int(fixed_lengths[i]),
                     exclude_duplicates, category_cap)
        for i in range(len(seeds))
    ]
    seqs = [list(map(int, s)) for s in seeds]
    for c, s in zip(cons, seqs):
        _check_lengths(c, len(s))
    alive = [i for i in range(len(seqs)) if len(seqs[i]) < cons[i].target_length()]
    while alive:
        ctx = None if contexts is None else [contexts[i] for i in alive]
        logp = scorer.next_log_probs([np.asarray(seqs[i], dtype=np.int64) for i in alive], ctx, direction)
        still = []
        for k, i in enumerate(alive):
            tok = _choose(logp[k], cons[i].allowed(scorer, seqs[i], base), temperature, rng)
            if tok == STOP:
                continue
            seqs[i].append(int(scorer.token_rows[tok]))
            if len(seqs[i]) < cons[i].target_length():
                still.append(i)
        alive = still
    return seqs


def _bidirectional_rows(scorer, seeds, contexts, **kw) -> list[list[int]]:
    """Forward model completes toward the toes, backward model toward the head."""
    max_len = kw.pop("max_len", 7)
    fixed = kw.pop("fixed_lengths", None)
    min_len = kw.pop("min_len", 2)
    seed = kw.pop("rng_seed", 0)
    fwd = sample_rows(scorer, seeds, contexts, max_len=max_len, fixed_lengths=None, min_len=1,
                      rng_seed=derive_label(seed, "forward"), direction="forward", **kw)
    # the forward pass may only use up the room a fixed length leaves
    if fixed is not None:
        fwd = [f[: max(fixed[i], len(seeds[i]))] for i, f in enumerate(fwd)]
    back = sample_rows(scorer, [f[::-1] for f in fwd], contexts, max_len=max_len, fixed_lengths=fixed,
                       min_len=min_len, rng_seed=derive_label(seed, "backward"), direction="backward", **kw)
    return [b[::-1] for b in back]


def derive_label(seed: int, label: str) -> int:
    return int(stream(seed, "phase", label).integers(0, 2**62))


def _to_outfit(model, rows: Sequence[int], source: str = "generated") -> Outfit:
    from .catalog import canonical_order
    ids = [model.catalog.items[r].item_id for r in rows]
    return Outfit(tuple(canonical_order(ids, model.catalog)), source=source)


def _wants_bidirectional(model) -> bool:
    return bool(getattr(model, "bidirectional", False))


def generate_batch(model, seeds: Sequence[Sequence[str]], contexts=None, *, max_len: int = 7,
                   temperature: float = 1.0, rng_seed: int = 0, fixed_lengths=None, min_len: int = 2,
                   exclude_duplicates: bool = True, category_cap: bool = False) -> list[Outfit]:
    """Batched :func:`autoregressive_generate` over many users/anchors."""
    seed_rows = [_seed_rows(model, s) for s in seeds]
    if getattr(model, "kind", "autoregressive") != "autoregressive":
        raise InputError(f"{type(model).__name__} is not a left-to-right model")
    kw = dict(max_len=max_len, temperature=temperature, rng_seed=rng_seed, fixed_lengths=fixed_lengths,
              min_len=min_len, exclude_duplicates=exclude_duplicates, category_cap=category_cap)
    with _scoring(model) as scorer:
        if _wants_bidirectional(model):
            rows = _bidirectional_rows(scorer, seed_rows, contexts, **kw)
        else:
            rows = sample_rows(scorer, seed_rows, contexts, **kw)
    out = []
    for r in rows:
        if len(r) < 2:
            raise GenerationError("generated outfit has fewer than two items")
        out.append(_to_outfit(model, r))
    return out


def autoregressive_generate(model, seed_items: Sequence[str] = (), context=None, max_len: int = 7,
                            temperature: float = 1.0, rng_seed: int = 0, fixed_length: int | None = None,
                            **kw) -> Outfit:
    """Grow an outfit from ``seed_items``; temperature 0 decodes greedily.

    Left-to-right models (GPT, Transformer) append one item per forward
    pass; bidirectional LSTMs extend forwards, then backwards from the seed.
    """
    fixed = None if fixed_length is None else [fixed_length]
    return generate_batch(model, [list(seed_items)], _contexts(context, 1), max_len=max_len,
                          temperature=temperature, rng_seed=rng_seed, fixed_lengths=fixed, **kw)[0]


# ------------------------------------------------------------------ beam search
@dataclass(frozen=True)
class Hypothesis:
    rows: tuple            # full sequence in reading order (seed included)
    log_prob: float        # sum of log-probabilities of generated tokens (STOP included)
    steps: int             # number of scored tokens
    finished: bool = False

    @property
    def perplexity(self) -> float:
        return math.exp(-self.log_prob / self.steps) if self.steps else 1.0


@dataclass
class Beam:
    """Hypotheses kept sorted by perplexity, at most ``width`` of them."""

    width: int
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if self.width < 1:
            raise InputError("beam width must be at least 1")

    def add(self, hyps):
        self.entries = sorted(list(self.entries) + list(hyps), key=lambda h: (h.perplexity, h.rows))[: self.width]
        return self


def _beam(scorer, seed: Sequence[int], context, width: int, cons: _Constraints, direction: str) -> list[Hypothesis]:
    base = _item_mask(scorer)
    alive = [Hypothesis(tuple(int(r) for r in seed), 0.0, 0)]
    done: list[Hypothesis] = []
    while alive:
        grow = [h for h in alive if len(h.rows) < cons.target_length()]
        done += [Hypothesis(h.rows, h.log_prob, h.steps, True) for h in alive if len(h.rows) >= cons.target_length()]
        if not grow:
            break
        logp = scorer.next_log_probs([np.asarray(h.rows, dtype=np.int64) for h in grow],
                                     _contexts(context, len(grow)), direction)
        cand = []
        for k, h in enumerate(grow):
            ok = cons.allowed(scorer, h.rows, base)
            for tok in np.flatnonzero(ok):
                cand.append((h.log_prob + float(logp[k, tok]), h, int(tok)))
        if not cand:
            raise GenerationError("no admissible token left to generate")
        cand.sort(key=lambda c: (-c[0], c[1].rows, c[2]))
        alive = []
        for lp, h, tok in cand[:width]:
            if tok == STOP:
                done.append(Hypothesis(h.rows, lp, h.steps + 1, True))
            else:
                alive.append(Hypothesis(h.rows + (int(scorer.token_rows[tok]),), lp, h.steps + 1))
    return Beam(width).add(done).entries


def beam_search(model, seed_items: Sequence = (), width: int = 5, max_len: int = 7, context=None,
                direction: str = "forward", bidirectional: bool | None = None, fixed_length: int | None = None,
                min_len: int = 2, exclude_duplicates: bool = True, category_cap: bool = False) -> list:
    """Perplexity-ranked completions of ``seed_items``.

    Each step expands every live hypothesis by every admissible token and
    keeps the ``width`` most likely; choosing STOP retires a hypothesis.
    With ``bidirectional`` each forward result is extended toward the head
    by the backward model.  Trained models get :class:`Outfit` objects back
    (best first); toy scorers get :class:`Hypothesis` objects.
    """
    if width < 1:
        raise InputError("beam width must be at least 1")
    seed = _seed_rows(model, seed_items)
    bidirectional = _wants_bidirectional(model) if bidirectional is None else bidirectional
    with _scoring(model) as scorer:
        if not bidirectional:
            cons = _Constraints(min_len, max_len, fixed_length, exclude_duplicates, category_cap)
            _check_lengths(cons, len(seed))
            hyps = _beam(scorer, seed, context, width, cons, direction)
        else:
            first = _Constraints(1, max_len, None, exclude_duplicates, category_cap)
            _check_lengths(first, len(seed))
            hyps = []
            for f in _beam(scorer, seed, context, width, first, "forward"):
                cons = _Constraints(min_len, max_len, fixed_length, exclude_duplicates, category_cap)
                if fixed_length is not None and len(f.rows) > fixed_length:
                    continue
                for b in _beam(scorer, f.rows[::-1], context, width, cons, "backward"):
                    hyps.append(Hypothesis(b.rows[::-1], f.log_prob + b.log_prob, f.steps + b.steps, True))
            hyps = Beam(width).add(hyps).entries
    if hasattr(model, "vocab"):
        return [_to_outfit(model, h.rows) for h in hyps if len(h.rows) >= 2]
    return hyps


def beam_hypotheses(scorer, seed_rows: Sequence[int] = (), width: int = 5, max_len: int = 7, context=None,
                    fixed_length: int | None = None, min_len: int = 1, exclude_duplicates: bool = True,
                    direction: str = "forward") -> list[Hypothesis]:
    """Beam search returning scored hypotheses (works for models and toy scorers)."""
    cons = _Constraints(min_len, max_len, fixed_length, exclude_duplicates)
    _check_lengths(cons, len(seed_rows))
    with _scoring(scorer) as s:
        return _beam(s, np.asarray(seed_rows, dtype=np.int64), context, width, cons, direction)


# ------------------------------------------------------------------ Gibbs sampling
def gibbs_chain(scorer, init: np.ndarray, contexts=None, num_iters: int = 100, rng=None,
                exclude_duplicates: bool = True) -> Iterator[np.ndarray]:
    """Yield the token states ``[B, n]`` after each single-site update.

    Every iteration picks one position per chain uniformly at random, masks
    it and redraws it from the model's conditional given the other items
    (and the pinned context).  The yielded array is updated in place.
    """
    state = np.array(init, dtype=np.int64, copy=True)
    batch, n = state.shape
    base = _item_mask(scorer)
    rows_of = scorer.token_rows
    arange = np.arange(batch)
    for _ in range(num_iters):
        pos = rng.integers(n, size=batch)
        rows = rows_of[state]
        logp = scorer.slot_log_probs(rows, pos, contexts)
        ok = np.broadcast_to(base, logp.shape).copy()
        if exclude_duplicates:
            others = state.copy()
            others[arange, pos] = -1
            hit = np.zeros_like(ok)
            for j in range(n):
                t = others[:, j]
                sel = t >= 0
                hit[arange[sel], t[sel]] = True
            ok &= ~hit
        if not ok.any(axis=1).all():
            raise GenerationError("no admissible token left for a Gibbs update")
        z = np.where(ok, logp, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        cdf = np.cumsum(p, axis=1)
        u = rng.random(batch) * cdf[:, -1]
        draw = np.minimum((cdf <= u[:, None]).sum(axis=1), logp.shape[1] - 1)
        state[arange, pos] = draw
        yield state


def _random_init(scorer, batch: int, n: int, rng, exclude_duplicates: bool) -> np.ndarray:
    items = np.flatnonzero(_item_mask(scorer))
    if exclude_duplicates and len(items) < n:
        raise GenerationError("vocabulary too small for an outfit without duplicates")
    if exclude_duplicates:
        return np.stack([rng.choice(items, size=n, replace=False) for _ in range(batch)])
    return rng.choice(items, size=(batch, n))


def gibbs_tokens(scorer, n: int, batch: int = 1, contexts=None, num_iters: int | None = None, rng_seed: int = 0,
                 exclude_duplicates: bool = True) -> np.ndarray:
    """Final Gibbs states ``[batch, n]`` (vocabulary tokens)."""
    if n < 2:
        raise InputError("Gibbs sampling needs an outfit length of at least 2")
    num_iters = 10 * n if num_iters is None else num_iters
    if num_iters < 10 * n:
        raise InputError(f"num_iters={num_iters} is below 10 x outfit length ({10 * n})")
    rng = stream(rng_seed, "gibbs", n)
    with _scoring(scorer) as s:
        state = _random_init(s, batch, n, rng, exclude_duplicates)
        for state in gibbs_chain(s, state, contexts, num_iters, rng, exclude_duplicates):
            pass
        return np.array(state)


def gibbs_generate(model, n: int, context=None, num_iters: int | None = None, rng_seed: int = 0,
                   exclude_duplicates: bool = True) -> Outfit:
    """Draw an ``n``-item outfit from a masked model by Gibbs sampling."""
    return gibbs_generate_batch(model, [n], None if context is None else [context], num_iters, rng_seed,
                                exclude_duplicates)[0]


def gibbs_generate_batch(model, lengths: Sequence[int], contexts=None, num_iters: int | None = None,
                         rng_seed: int = 0, exclude_duplicates: bool = True) -> list[Outfit]:
    """Gibbs outfits for many users at once; chains of equal length share forward passes."""
    if getattr(model, "kind", None) != "masked":
        raise InputError(f"{type(model).__name__} is not a masked model")
    out: list = [None] * len(lengths)
    for n in sorted(set(lengths)):
        idx = [i for i, m in enumerate(lengths) if m == n]
        ctx = None if contexts is None else [contexts[i] for i in idx]
        iters = None if num_iters is None else max(num_iters, 10 * n)
        states = gibbs_tokens(model, n, len(idx), ctx, iters, rng_seed, exclude_duplicates)
        for i, toks in zip(idx, states):
            rows = model.vocab_rows[toks - NUM_SPECIAL]
            out[i] = _to_outfit(model, rows)
    return out


# ------------------------------------------------------------------ nearest-neighbour ranking
def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v, dtype=np.float64), where=norm > 0)


def nn_scores(history: np.ndarray, candidates: Sequence[np.ndarray]) -> np.ndarray:
    """Mean over each candidate's items of the best cosine match in the history."""
    hist = _unit(np.asarray(history, dtype=np.float64))
    if len(hist) == 0:
        raise RankingError("user history is empty")
    return np.array([(_unit(np.asarray(c, dtype=np.float64)) @ hist.T).max(axis=1).mean() for c in candidates])


def nn_rank(user: ActionSequence | Sequence[str], candidates: Sequence[Outfit], catalog: Catalog):
    """Candidates sorted by descending nearest-neighbour similarity to the user's history.

    Returns ``(outfit, score)`` pairs; ties keep the input order.
    """
    history_ids = user.item_ids() if isinstance(user, ActionSequence) else list(user)
    if not history_ids:
        raise RankingError("user history is empty")
    image = catalog.image
    history = image[catalog.indices(history_ids)]
    if not candidates:
        return []
    scores = nn_scores(history, [image[catalog.indices(o.items)] for o in candidates])
    order = np.argsort(-scores, kind="stable")
    return [(candidates[i], float(scores[i])) for i in order]


@dataclass
class CandidateOutfitIndex:
    """Anchor item id -> up to ``cap`` precomputed outfits containing it."""

    cap: int = 100
    threshold: float = 0.5
    outfits: dict = field(default_factory=dict)

    def add(self, anchor: str, outfit: Outfit):
        if anchor not in outfit.items:
            raise InputError(f"candidate outfit does not contain its anchor {anchor}")
        bucket = self.outfits.setdefault(anchor, [])
        if len(bucket) < self.cap and all(o.key() != outfit.key() for o in bucket):
            bucket.append(outfit)

    def __contains__(self, anchor):
        return anchor in self.outfits

    def __getitem__(self, anchor: str) -> list[Outfit]:
        if anchor not in self.outfits:
            raise CandidateLookupError(f"anchor {anchor!r} is not in the candidate index")
        return self.outfits[anchor]

    def __len__(self):
        return len(self.outfits)


def build_candidate_index(model, anchors: Sequence[str], layouts: Sequence[tuple], cap: int = 100,
                          threshold: float = 0.5, rng_seed: int = 0, attempts: int | None = None,
                          top_k: int = 3, pool: int | None = None, chunk: int = 512) -> CandidateOutfitIndex:
    """Precompute Siamese-approved outfits around each anchor.

    Each attempt picks a category layout (observed in training outfits) that
    contains the anchor's category and fills the remaining slots one at a
    time with one of the ``top_k`` items the Siamese net scores highest for
    the partial outfit.  Only completed outfits whose compatibility
    probability reaches ``threshold`` are kept.  ``pool`` limits each
    category to its most frequent vocabulary items.
    """
    catalog = model.catalog
    index = CandidateOutfitIndex(cap, threshold)
    attempts = 2 * cap if attempts is None else attempts
    vocab_rows = model.vocab_rows
    by_cat = {}
    codes = catalog.codes[:, 0]
    with model.inference():
        for c in range(len(CATEGORIES)):
            rows = vocab_rows[codes[vocab_rows] == c]
            rows = rows if pool is None else rows[:pool]
            if len(rows):
                by_cat[c] = (rows, model.encode_items(rows).data)
        layouts = [tuple(CATEGORIES.index(c) if isinstance(c, str) else int(c) for c in lay) for lay in layouts]
        jobs = []  # (anchor, rng, layout, partial)
        for anchor in anchors:
            rng = stream(rng_seed, "candidates", anchor)
            arow = catalog.index(anchor)
            acat = int(codes[arow])
            fitting = [lay for lay in layouts if acat in lay and all(c in by_cat for c in lay if c != acat)]
            if fitting:
                jobs += [(anchor, rng, acat, fitting[i], [arow]) for i in rng.integers(len(fitting), size=attempts)]
        for c in range(len(CATEGORIES)):
            need = [j for j in jobs if c in j[3] and not (c == j[2] and j[3].count(c) == 1)]
            if not need or c not in by_cat:
                continue
            rows, enc = by_cat[c]
            where = {int(r): k for k, r in enumerate(rows)}
            # early steps repeat the same partial outfit many times: score each once
            keys = [tuple(sorted(j[4])) for j in need]
            uniq = sorted(set(keys))
            slot = {k: i for i, k in enumerate(uniq)}
            scores = np.concatenate([model.completion_scores([np.asarray(k) for k in uniq[lo:lo + chunk]], rows, enc)
                                     for lo in range(0, len(uniq), chunk)])
            for key, (_, rng, _, _, partial) in zip(keys, need):
                s = scores[slot[key]].copy()
                s[[where[r] for r in partial if r in where]] = -np.inf
                top = np.argsort(-s, kind="stable")[:top_k]
                top = top[np.isfinite(s[top])]
                if len(top):
                    partial.append(int(rows[top[rng.integers(len(top))]]))
        done = [(j[0], j[4]) for j in jobs if len(j[4]) >= 2]
        for lo in range(0, len(done), chunk):
            part = done[lo:lo + chunk]
            probs = model.outfit_scores([np.asarray(p) for _, p in part])
            for (anchor, p), prob in zip(part, probs):
                if prob >= threshold:
                    index.add(anchor, _to_outfit(model, p, source="generated"))
    return index


def personalized_siamese_recommend(user: ActionSequence | Sequence[str], anchor: str,
                                   index: CandidateOutfitIndex, catalog: Catalog) -> Outfit:
    """Best nearest-neighbour match among the anchor's precomputed outfits."""
    candidates = index[anchor]
    if not candidates:
        raise CandidateLookupError(f"anchor {anchor!r} has no candidate outfits")
    return nn_rank(user, candidates, catalog)[0][0]
