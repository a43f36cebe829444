"""Offline metrics: perplexity, fill-in-the-blank recall, compatibility AUC and the
personalisation metrics (attribute match rates, personalisation rate, item diversity).

Model-dependent metrics dispatch on ``model.kind``:

* ``"autoregressive"`` models score sequences with ``sequence_nll``; the
  bidirectional LSTMs average their forward and backward cross-entropies;
* ``"masked"`` models are scored left to right: item ``i`` is predicted in
  a masked slot next to items ``1 .. i-1`` only;
* ``"discriminative"`` models (Siamese) have no perplexity and score
  outfits directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .catalog import ATTRIBUTES, NUM_SPECIAL, UNK, Catalog, Outfit
from .errors import ConfigurationError, MetricError
from .rng import stream

METRIC_ORDER = (
    "pp", "cp_auc", "fitb@1", "fitb@5", "fitb@25", "fitb@250",
    "brand_category", "color_category", "brand_color_category",
    "personalization", "diversity",
)
RATE_METRICS = set(METRIC_ORDER) - {"pp"}
SCHEMAS = {
    "brand-category": ("brand", "category"),
    "color-category": ("color", "category"),
    "brand-color-category": ("brand", "color", "category"),
}


# ------------------------------------------------------------------ cutoffs
@dataclass(frozen=True)
class RankCutoffs:
    values: tuple = (1, 5, 25, 250)

    def __post_init__(self):
        v = tuple(int(r) for r in self.values)
        if not v or v[0] < 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ConfigurationError(f"rank cutoffs must be positive and strictly increasing: {v}")
        object.__setattr__(self, "values", v)

    def check(self, num_candidates: int):
        if self.values[-1] > num_candidates:
            raise ConfigurationError(
                f"largest cutoff {self.values[-1]} exceeds the {num_candidates} candidate items")


def rank_of_true(scores: np.ndarray, true_index: np.ndarray, allowed: np.ndarray | None = None) -> np.ndarray:
    """1-based rank of each row's true entry among allowed entries; ties count against it."""
    scores = np.asarray(scores, dtype=np.float64)
    rows = np.arange(len(scores))
    true_index = np.asarray(true_index)
    ok = np.ones_like(scores, dtype=bool) if allowed is None else np.asarray(allowed, dtype=bool).copy()
    ok[rows, true_index] = False
    target = scores[rows, true_index][:, None]
    return 1 + ((scores >= target) & ok).sum(axis=1)


def recall_at(ranks: np.ndarray, cutoffs: RankCutoffs = RankCutoffs()) -> dict:
    ranks = np.asarray(ranks)
    if len(ranks) == 0:
        raise MetricError("no ranked outfits")
    return {r: float(np.mean(ranks <= r)) for r in cutoffs.values}


# ------------------------------------------------------------------ AUC
def auc_mann_whitney(pos: Sequence[float], neg: Sequence[float]) -> float:
    """ROC-AUC from the rank-sum statistic with midranks for ties."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("AUC needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


# ------------------------------------------------------------------ sequence scoring
def _chunks(n: int, size: int):
    for lo in range(0, n, size):
        yield slice(lo, min(n, lo + size))


def _frozen(model):
    import contextlib
    return model.inference() if hasattr(model, "inference") else contextlib.nullcontext(model)


def _contexts(model, examples):
    if getattr(model, "contextual", False) or getattr(model.config, "context_mode", "none") != "none":
        return [ex.context for ex in examples]
    return None


def _item_nll_autoregressive(model, examples) -> list[np.ndarray]:
    ctx = _contexts(model, examples) if hasattr(model, "config") else None
    rows = [ex.rows for ex in examples]
    tgts = [ex.targets for ex in examples]
    if getattr(model, "bidirectional", False):
        fwd = model.direction_nll(rows, tgts, "forward", ctx)
        bwd = model.direction_nll(rows, tgts, "backward", ctx)
        return [np.concatenate([f[:-1], b[:-1]]) for f, b in zip(fwd, bwd)]
    nll = model.sequence_nll(rows, tgts, ctx)
    return [a[:-1] for a in nll]


def _item_nll_masked(model, examples) -> list[np.ndarray]:
    """Left-to-right scoring: item i sits in a masked slot after items < i, nothing to its right."""
    ctx_all = _contexts(model, examples) if hasattr(model, "config") else None
    visible, ctx, who, target = [], [], [], []
    for k, ex in enumerate(examples):
        for i in range(len(ex.rows)):
            visible.append(ex.rows[:i])
            ctx.append(None if ctx_all is None else ctx_all[k])
            who.append(k)
            target.append(ex.targets[i])
    logp = model.masked_log_probs(visible, None if ctx_all is None else ctx)
    target = np.asarray(target)
    nll = -logp[np.arange(len(target)), np.maximum(target, 0)]
    nll[target < 0] = np.nan
    who = np.asarray(who)
    return [nll[who == k] for k in range(len(examples))]


def item_nll(model, examples, batch_size: int = 256) -> list[np.ndarray]:
    """Per-item negative log-likelihoods of every outfit (NaN at unknown items)."""
    out = []
    with _frozen(model):
        for sl in _chunks(len(examples), batch_size):
            chunk = examples[sl]
            if model.kind == "masked":
                out += _item_nll_masked(model, chunk)
            elif model.kind == "autoregressive":
                out += _item_nll_autoregressive(model, chunk)
            else:
                raise MetricError(f"{type(model).__name__} does not define sequence likelihoods")
    return out


def outfit_ce(model, examples, batch_size: int = 256) -> np.ndarray:
    """Mean per-item cross-entropy of each outfit; NaN when an item is out of vocabulary.

    Bidirectional LSTMs report the average of their forward and backward
    cross-entropies.
    """
    return np.array([float(np.mean(a)) if not np.isnan(a).any() else np.nan
                     for a in item_nll(model, examples, batch_size)])


@dataclass(frozen=True)
class PerplexityResult:
    value: float
    scored: int
    skipped: int

    def __float__(self):
        return self.value


def perplexity(model, examples, batch_size: int = 256) -> PerplexityResult:
    """Mean over outfits of ``exp(mean CE)``; outfits with unknown items are skipped and counted."""
    keep = [ex for ex in examples if not (np.asarray(ex.targets) == UNK).any()]
    skipped = len(examples) - len(keep)
    if not keep:
        raise MetricError("every outfit contains an out-of-vocabulary item")
    ce = outfit_ce(model, keep, batch_size)
    return PerplexityResult(float(np.mean(np.exp(ce))), len(keep), skipped)


# ------------------------------------------------------------------ FITB
@dataclass(frozen=True)
class FITBResult:
    recall: dict
    ranks: np.ndarray = field(repr=False)
    skipped: int = 0


def fitb_positions(examples, rng_seed: int) -> np.ndarray:
    rng = stream(rng_seed, "fitb")
    return np.array([int(rng.integers(len(ex.rows))) for ex in examples], dtype=np.int64)


def _fitb_scores(model, examples, positions) -> np.ndarray:
    """Score every vocabulary token as the blank of each outfit, ``[B, V]``."""
    rest = [np.delete(ex.rows, p) for ex, p in zip(examples, positions)]
    ctx = _contexts(model, examples) if hasattr(model, "config") else None
    kind = model.kind
    if kind == "masked":
        return model.masked_log_probs(rest, ctx)
    if kind == "discriminative":
        cand_rows = model.vocab_rows
        enc = model.encode_items(cand_rows).data
        scores = np.full((len(examples), len(model.vocab)), -np.inf)
        scores[:, NUM_SPECIAL:] = model.completion_scores(rest, cand_rows, enc)
        return scores
    if getattr(model, "bidirectional", False):
        before = [ex.rows[:p] for ex, p in zip(examples, positions)]
        after = [ex.rows[p + 1:][::-1] for ex, p in zip(examples, positions)]
        return (model.next_log_probs(before, ctx, "forward")
                + model.next_log_probs(after, ctx, "backward"))
    return model.next_log_probs(rest, ctx, "forward")


def fitb(model, examples, cutoffs: RankCutoffs = RankCutoffs(), rng_seed: int = 0,
         batch_size: int = 256) -> FITBResult:
    """Recall@r of the true item for one seeded blank per outfit.

    Candidates are the vocabulary items other than those still in the
    outfit; ties with the true item count against it.
    """
    positions = fitb_positions(examples, rng_seed)
    keep = [i for i, (ex, p) in enumerate(zip(examples, positions)) if ex.targets[p] != UNK]
    if not keep:
        raise MetricError("no outfit has an in-vocabulary blank")
    vsize = len(model.vocab)
    item_tokens = np.zeros(vsize, dtype=bool)
    item_tokens[NUM_SPECIAL:] = True
    cutoffs.check(int(item_tokens.sum()))
    ranks = []
    with _frozen(model):
        for sl in _chunks(len(keep), batch_size):
            idx = keep[sl]
            exs = [examples[i] for i in idx]
            pos = positions[idx]
            scores = _fitb_scores(model, exs, pos)
            allowed = np.broadcast_to(item_tokens, scores.shape).copy()
            for k, (ex, p) in enumerate(zip(exs, pos)):
                others = np.delete(ex.targets, p)
                allowed[k, others[others >= 0]] = False
            true = np.array([ex.targets[p] for ex, p in zip(exs, pos)])
            ranks.append(rank_of_true(scores, true, allowed))
    ranks = np.concatenate(ranks)
    return FITBResult(recall_at(ranks, cutoffs), ranks, len(examples) - len(keep))


# ------------------------------------------------------------------ compatibility
@dataclass(frozen=True)
class AUCResult:
    auc: float
    positives: int
    negatives: int
    skipped: int = 0


def cp_negatives(examples, vocab, catalog: Catalog, rng_seed: int, hard: bool = False):
    """One corrupted copy of each outfit: a random position replaced by a random vocabulary item.

    ``hard`` restricts the replacement to the replaced item's category.
    """
    from .models import make_example
    from .synthgen import replace_one

    rng = stream(rng_seed, "cp-negatives")
    items = list(vocab.item_ids)
    by_cat = {}
    if hard:
        for iid in items:
            by_cat.setdefault(catalog.category_of(iid), []).append(iid)
    out = []
    for ex in examples:
        outfit = Outfit(tuple(ex.item_ids))
        if hard:
            pos = int(rng.integers(len(outfit)))
            cat = catalog.category_of(outfit.items[pos])
            pool = [i for i in by_cat.get(cat, []) if i not in outfit.items]
            new = list(outfit.items)
            new[pos] = pool[int(rng.integers(len(pool)))] if pool else new[pos]
            corrupted = Outfit(tuple(new), "negative")
        else:
            corrupted = replace_one(outfit, items, rng=rng)
        neg = make_example(corrupted.items, catalog, vocab, None, None)
        neg.context = ex.context
        out.append(neg)
    return out


def outfit_scores(model, examples, batch_size: int = 256) -> np.ndarray:
    """Compatibility score per outfit: ``exp(-CE)`` for likelihood models, the classifier otherwise."""
    if model.kind == "discriminative":
        out = []
        with _frozen(model):
            for sl in _chunks(len(examples), batch_size):
                out.append(model.outfit_scores([ex.rows for ex in examples[sl]]))
        return np.concatenate(out) if out else np.zeros(0)
    return np.exp(-outfit_ce(model, examples, batch_size))


def compatibility_auc(model, examples, rng_seed: int = 0, hard: bool = False,
                      batch_size: int = 256) -> AUCResult:
    """AUC of positives against one seeded replacement negative each."""
    keep = [ex for ex in examples if not (np.asarray(ex.targets) == UNK).any()]
    if len(keep) < 2:
        raise MetricError("compatibility AUC needs at least 2 outfits")
    neg = cp_negatives(keep, model.vocab, model.catalog, rng_seed, hard)
    pos_scores = outfit_scores(model, keep, batch_size)
    neg_scores = outfit_scores(model, neg, batch_size)
    return AUCResult(auc_mann_whitney(pos_scores, neg_scores), len(keep), len(neg), len(examples) - len(keep))


# ------------------------------------------------------------------ personalisation
def _signature(catalog: Catalog, item_id: str, attrs) -> tuple:
    item = catalog[item_id]
    return tuple(item.attribute(a) for a in attrs)


def attribute_match_rate(recommended: Sequence[Outfit], references: Sequence[Sequence[str]], schema: str,
                         catalog: Catalog) -> float:
    """Fraction of (user, reference item) events matched by some recommended item under ``schema``."""
    if schema not in SCHEMAS:
        raise ConfigurationError(f"unknown schema {schema!r}; choose from {sorted(SCHEMAS)}")
    if len(recommended) != len(references):
        raise MetricError("one reference list per recommended outfit is required")
    attrs = SCHEMAS[schema]
    hits = total = 0
    for outfit, refs in zip(recommended, references):
        have = {_signature(catalog, i, attrs) for i in outfit.items}
        for r in refs:
            total += 1
            hits += _signature(catalog, r, attrs) in have
    if total == 0:
        raise MetricError("no reference events")
    return hits / total


def personalization_rate(recommendations: Sequence[Outfit]) -> float:
    """Distinct outfits (as item sets) per user served."""
    if len(recommendations) == 0:
        raise MetricError("personalisation rate needs at least one user")
    return len({frozenset(o.items) for o in recommendations}) / len(recommendations)


def item_diversity(recommendations: Sequence[Outfit]) -> float:
    """Unique items over total item slots across all recommendations."""
    total = sum(len(o.items) for o in recommendations)
    if total == 0:
        raise MetricError("item diversity needs at least one recommended item")
    return len({i for o in recommendations for i in o.items}) / total


# ------------------------------------------------------------------ sanity floor
def slot_onehots(outfits: Sequence[Outfit], catalog: Catalog) -> np.ndarray:
    """Per-category slot of attribute one-hots (zeros when the category is absent), concatenated."""
    from .catalog import CATEGORIES, VOCABULARIES

    sizes = [len(VOCABULARIES[a]) for a in ATTRIBUTES[1:]]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    width = int(offsets[-1])
    x = np.zeros((len(outfits), len(CATEGORIES) * width))
    for n, o in enumerate(outfits):
        for iid in o.items:
            codes = catalog.codes[catalog.index(iid)]
            base = int(codes[0]) * width
            x[n, base + offsets[:-1] + codes[1:]] = 1.0
    return x


def logistic_floor_auc(train_pos: Sequence[Outfit], train_neg: Sequence[Outfit], test_pos: Sequence[Outfit],
                       test_neg: Sequence[Outfit], catalog: Catalog, seed: int = 0) -> float:
    """CP-AUC of a logistic regression on per-slot attribute one-hots (the sanity floor)."""
    from sklearn.linear_model import LogisticRegression

    x = slot_onehots(list(train_pos) + list(train_neg), catalog)
    y = np.r_[np.ones(len(train_pos)), np.zeros(len(train_neg))]
    clf = LogisticRegression(C=1.0, max_iter=2000, random_state=seed)
    clf.fit(x, y)
    p = clf.decision_function(slot_onehots(test_pos, catalog))
    n = clf.decision_function(slot_onehots(test_neg, catalog))
    return auc_mann_whitney(p, n)


# ------------------------------------------------------------------ reports
@dataclass
class EvalReport:
    """Metric row for one model on one dataset.

    ``runtime_seconds`` is wall-clock and therefore excluded from the
    canonical serialisation; everything else is a pure function of the
    data, configuration and seeds.
    """

    model_id: str
    dataset_id: str
    seed: int
    metrics: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    runtime_seconds: float | None = None

    def validate(self) -> "EvalReport":
        for k, v in self.metrics.items():
            if k not in METRIC_ORDER:
                raise MetricError(f"unknown metric {k!r}")
            if v is None or (isinstance(v, float) and math.isnan(v)):
                continue
            if k in RATE_METRICS and not 0.0 <= v <= 1.0:
                raise MetricError(f"{k}={v} outside [0, 1]")
            if k == "pp" and not (math.isfinite(v) and v >= 1.0 - 1e-9):
                raise MetricError(f"perplexity {v} is not a finite value >= 1")
        fitb_vals = [self.metrics.get(f"fitb@{r}") for r in (1, 5, 25, 250)]
        fitb_vals = [v for v in fitb_vals if v is not None]
        if any(b < a for a, b in zip(fitb_vals, fitb_vals[1:])):
            raise MetricError("FITB recall must be non-decreasing in r")
        return self

    def to_dict(self, wall_clock: bool = False) -> dict:
        d = {
            "schema": "outfitbench/eval-report",
            "version": 1,
            "model_id": self.model_id,
            "dataset_id": self.dataset_id,
            "seed": self.seed,
            "metrics": {k: _clean(self.metrics[k]) for k in METRIC_ORDER if k in self.metrics},
            "notes": {k: _clean(v) for k, v in sorted(self.notes.items())},
        }
        if wall_clock:
            d["runtime_seconds"] = self.runtime_seconds
        return d

    def to_json(self, wall_clock: bool = False) -> str:
        return json.dumps(self.to_dict(wall_clock), sort_keys=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema") != "outfitbench/eval-report":
            raise MetricError("record is not an eval report")
        for key in ("model_id", "dataset_id", "seed", "metrics"):
            if key not in d:
                raise MetricError(f"eval report lacks {key!r}")
        return cls(d["model_id"], d["dataset_id"], int(d["seed"]),
                   {k: (None if v is None else float(v)) for k, v in d["metrics"].items()},
                   dict(d.get("notes", {})), d.get("runtime_seconds")).validate()

    @classmethod
    def from_json(cls, line: str) -> "EvalReport":
        return cls.from_dict(json.loads(line))


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) else float(np.round(v, 12))
    if isinstance(v, np.integer):
        return int(v)
    return v


HEADERS = {
    "pp": "PP", "cp_auc": "CP-AUC", "fitb@1": "FITB@1", "fitb@5": "FITB@5", "fitb@25": "FITB@25",
    "fitb@250": "FITB@250", "brand_category": "brand-cat", "color_category": "color-cat",
    "brand_color_category": "brand-color-cat", "personalization": "pers.", "diversity": "div.",
}


def format_table(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table, one row per report, columns in the fixed metric order."""
    cols = [k for k in METRIC_ORDER if any(k in r.metrics for r in reports)]
    header = ["model", "seed"] + [HEADERS[k] for k in cols]
    rows = []
    for r in reports:
        cells = [r.model_id, str(r.seed)]
        for k in cols:
            v = r.metrics.get(k)
            if v is None or (isinstance(v, float) and math.isnan(v)):
                cells.append("-")
            elif k == "pp":
                cells.append(f"{v:.2f}")
            else:
                cells.append(f"{100 * v:.1f}%")
        rows.append(cells)
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for cells in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))))
    return "\n".join(lines)
