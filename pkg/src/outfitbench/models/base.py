"""Shared model plumbing: configuration, examples, item encoders, output head."""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from ..catalog import (
    EVENT_TYPES,
    MASK,
    NUM_SPECIAL,
    QUESTIONNAIRE_FIELDS,
    STOP,
    UNK,
    ActionSequence,
    Catalog,
    ItemFeaturizer,
    Questionnaire,
    Vocabulary,
    canonical_order,
)
from ..errors import ConfigurationError, InputError
from ..nn import Linear, Module, Tensor, concat, no_grad, parameter
from ..nn import functional as F
from ..nn.tensor import take_rows

FAMILIES = ("siamese", "lstm", "gpt", "bert", "ctx_gpt", "ctx_bert", "transformer", "s2s_lstm")
CONTEXT_MODES = ("none", "questionnaire", "action_sequence")
REQUIRED_CONTEXT = {
    "siamese": "none", "lstm": "none", "gpt": "none", "bert": "none",
    "ctx_gpt": "questionnaire", "ctx_bert": "questionnaire",
    "transformer": "action_sequence", "s2s_lstm": "action_sequence",
}

# per-family defaults at full size
PAPER_DEFAULTS = {
    "gpt": dict(d_model=128, num_heads=8, num_layers=4, dropout=0.01, batch_size=512),
    "bert": dict(d_model=128, num_heads=8, num_layers=4, dropout=0.01, batch_size=512),
    "lstm": dict(d_model=128, hidden=512, dropout=0.3, batch_size=64),
    "s2s_lstm": dict(d_model=128, hidden=512, dropout=0.3, batch_size=64),
    "siamese": dict(siamese_width=64, batch_size=32, dropout=0.0),
    "transformer": dict(d_model=216, num_heads=12, num_layers=2, dropout=0.1, batch_size=64),
}
PAPER_DEFAULTS["ctx_gpt"] = PAPER_DEFAULTS["gpt"]
PAPER_DEFAULTS["ctx_bert"] = PAPER_DEFAULTS["bert"]

ACTION_FEATURES = 3 + 1  # one-hot event type and normalised age
MAX_AGE_DAYS = 30.0


@dataclass
class ModelConfig:
    family: str
    d_model: int = 128
    num_heads: int = 8
    num_layers: int = 4
    dropout: float = 0.01
    hidden: int = 512
    siamese_width: int = 64
    context_mode: str = "none"
    batch_size: int = 512
    lr: float = 1e-3
    dtype: str = "float32"
    use_positional_encoding: bool = False
    head_init: float = 0.01
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown model family {self.family!r}; choose from {FAMILIES}")
        if self.context_mode not in CONTEXT_MODES:
            raise ConfigurationError(f"unknown context mode {self.context_mode!r}")
        if self.context_mode != REQUIRED_CONTEXT[self.family]:
            raise ConfigurationError(
                f"family {self.family} needs context_mode={REQUIRED_CONTEXT[self.family]!r}, "
                f"got {self.context_mode!r}")
        if self.use_positional_encoding:
            raise ConfigurationError("outfit models are position-free; positional encoding must stay off")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.family in ("gpt", "bert", "ctx_gpt", "ctx_bert", "transformer") and self.d_model % self.num_heads:
            raise ConfigurationError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")

    @classmethod
    def for_family(cls, family: str, **overrides) -> "ModelConfig":
        if family not in FAMILIES:
            raise ConfigurationError(f"unknown model family {family!r}; choose from {FAMILIES}")
        base = dict(PAPER_DEFAULTS.get(family, {}))
        base["context_mode"] = REQUIRED_CONTEXT[family]
        base.update(overrides)
        return cls(family=family, **base)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in names:
                continue
            default = getattr(cls, k, None) if k != "family" else None
            if isinstance(default, bool):
                v = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            elif isinstance(default, int) and not isinstance(default, bool):
                v = int(v)
            elif isinstance(default, float):
                v = float(v)
            kwargs[k] = v
        return cls(**kwargs)


# ------------------------------------------------------------------ examples
@dataclass
class ActionContext:
    rows: np.ndarray      # catalog rows of acted-on items
    events: np.ndarray    # event type codes
    ages: np.ndarray      # age in days


@dataclass
class Example:
    """One outfit in canonical order plus its (optional) user context."""

    rows: np.ndarray                 # catalog rows
    targets: np.ndarray              # vocabulary ids, UNK for out-of-vocabulary items
    context: object = None           # questionnaire token ids or ActionContext
    anchor: int | None = None        # position of the anchor item inside ``rows``
    item_ids: tuple = field(default=())


QUESTION_OFFSETS = {}
_offset = 0
for _name, _values in QUESTIONNAIRE_FIELDS.items():
    QUESTION_OFFSETS[_name] = _offset
    _offset += len(_values)
NUM_QUESTION_TOKENS = _offset


def questionnaire_tokens(q: Questionnaire) -> np.ndarray:
    return np.array([QUESTION_OFFSETS[name] + code for name, code in q.tokens()], dtype=np.int64)


def action_context(seq: ActionSequence, catalog: Catalog) -> ActionContext:
    if len(seq) == 0:
        raise InputError("empty action sequence")
    return ActionContext(
        rows=catalog.indices(a.item_id for a in seq.actions),
        events=np.array([EVENT_TYPES.index(a.event) for a in seq.actions], dtype=np.int64),
        ages=np.array([a.age_days for a in seq.actions], dtype=np.float64),
    )


def make_example(item_ids: Sequence[str], catalog: Catalog, vocab: Vocabulary, context=None,
                 anchor: str | None = None) -> Example:
    ordered = canonical_order(item_ids, catalog)
    if isinstance(context, Questionnaire):
        context = questionnaire_tokens(context)
    elif isinstance(context, ActionSequence):
        context = action_context(context, catalog)
    return Example(catalog.indices(ordered), vocab.encode(ordered), context,
                   None if anchor is None else ordered.index(anchor), tuple(ordered))


def examples_from_outfits(outfits, catalog, vocab) -> list[Example]:
    return [make_example(o.items, catalog, vocab) for o in outfits]


def examples_from_users(users, catalog, vocab, use_context: bool = True) -> list[Example]:
    out = []
    for u in users:
        for o in u.outfits:
            out.append(make_example(o.items, catalog, vocab, u.context if use_context else None, u.anchor))
    return out


def pad(arrays: Sequence[np.ndarray], fill=0, dtype=None):
    """Right-pad 1-D arrays into a matrix; returns (matrix, validity mask)."""
    n = max((len(a) for a in arrays), default=0)
    dtype = dtype or (arrays[0].dtype if arrays else np.int64)
    out = np.full((len(arrays), n), fill, dtype=dtype)
    mask = np.zeros((len(arrays), n), dtype=bool)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
        mask[i, : len(a)] = True
    return out, mask


# ------------------------------------------------------------------ modules
class ItemInput(Module):
    """Projects item features (image vector plus attribute embeddings) to ``d``."""

    def __init__(self, featurizer: ItemFeaturizer, d: int, rng, dtype):
        self.proj = Linear(featurizer.output_dim, d, rng, dtype=dtype)

    def forward(self, feats: Tensor) -> Tensor:
        return self.proj(feats)


class TiedHead(Module):
    """Output layer whose item rows are a projection of the item features.

    ``logits = h @ W.T + bias`` with ``W[item] = proj(features(item))`` and
    free rows for the two reserved tokens.  Tokens outside ``support`` get a
    large negative logit, so the softmax runs over the supported tokens only.
    """

    def __init__(self, featurizer: ItemFeaturizer, d: int, vocab_size: int, rng, dtype,
                 support: np.ndarray, init_scale: float = 0.01):
        self.proj = Linear(featurizer.output_dim, d, rng, dtype=dtype, bias=False, scale=init_scale)
        self.special = parameter(rng.normal(0, init_scale, (NUM_SPECIAL, d)).astype(dtype))
        self.bias = parameter(np.zeros(vocab_size, dtype=dtype))
        self.support = np.asarray(support, dtype=bool)
        self.vocab_size = vocab_size

    def table(self, item_feats: Tensor) -> Tensor:
        return concat([self.special, self.proj(item_feats)], axis=0)

    def logits(self, h: Tensor, table: Tensor) -> Tensor:
        lead = h.shape[:-1]
        flat = h.reshape(-1, h.shape[-1])
        out = (flat @ table.transpose()) + self.bias
        out = F.additive_mask(out, self.support)
        return out.reshape(*lead, self.vocab_size)

    def zero_(self):
        """Make every supported token equally likely (uniform output)."""
        for p in (self.proj.weight, self.special, self.bias):
            p.data[...] = 0.0


class QuestionnaireEncoder(Module):
    """Per-answer embeddings averaged, then projected to ``d``."""

    def __init__(self, d: int, rng, dtype, embed_dim: int = 32):
        self.table = parameter(rng.normal(0, 0.1, (NUM_QUESTION_TOKENS, embed_dim)).astype(dtype))
        self.proj = Linear(embed_dim, d, rng, dtype=dtype)

    def forward(self, tokens: Sequence[np.ndarray]) -> Tensor:
        ids, mask = pad(list(tokens))
        emb = take_rows(self.table, ids)
        weights = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1)
        pooled = (emb * Tensor(weights[..., None].astype(emb.dtype))).sum(axis=1)
        return self.proj(pooled)


def action_features(contexts: Sequence[ActionContext], featurizer, catalog, dtype):
    """Raw (unprojected) action features and the validity mask."""
    rows, mask = pad([c.rows for c in contexts])
    events, _ = pad([c.events for c in contexts])
    ages, _ = pad([c.ages for c in contexts], dtype=np.float64)
    extra = np.zeros(rows.shape + (ACTION_FEATURES,), dtype=dtype)
    extra[..., :3] = np.eye(3, dtype=dtype)[events]
    extra[..., 3] = ages / MAX_AGE_DAYS
    return concat([featurizer.rows(catalog, rows), Tensor(extra)], axis=-1), mask


def flat_rows(h: Tensor, valid: np.ndarray) -> Tensor:
    """Rows of ``h[B, L, d]`` at the positions where ``valid`` is true (row-major)."""
    b, l, d = h.shape
    return take_rows(h.reshape(b * l, d), np.flatnonzero(valid.reshape(-1)))


# ------------------------------------------------------------------ base model
class OutfitModel(Module):
    """Common state of every family: config, vocabulary, catalog, featurizer.

    Sub-classes set ``kind`` to ``"autoregressive"``, ``"masked"`` or
    ``"discriminative"`` and implement the matching scoring methods.
    """

    kind = "autoregressive"

    def __init__(self, config: ModelConfig, vocab: Vocabulary, catalog: Catalog, seed: int):
        from ..rng import stream

        self.config = config
        self.vocab = vocab
        self.catalog = catalog
        self.seed = seed
        self.dtype = config.np_dtype
        self._init_rng = stream(seed, "init", config.family)
        self.featurizer = ItemFeaturizer(self._init_rng, dtype=self.dtype)
        self.vocab_rows = vocab.catalog_indices(catalog)
        self._cache = None
        self.forward_passes = 0

    # --- helpers ---------------------------------------------------------
    def item_features(self, rows: np.ndarray) -> Tensor:
        return self.featurizer.rows(self.catalog, rows)

    def vocab_features(self) -> Tensor:
        return self.featurizer.rows(self.catalog, self.vocab_rows)

    def support(self, allow_stop: bool) -> np.ndarray:
        s = np.ones(len(self.vocab), dtype=bool)
        s[MASK] = False
        if not allow_stop:
            s[STOP] = False
        return s

    def head_table(self, head: TiedHead) -> Tensor:
        if self._cache is not None:
            key = id(head)
            if key not in self._cache:
                self._cache[key] = head.table(self.vocab_features())
            return self._cache[key]
        return head.table(self.vocab_features())

    @contextlib.contextmanager
    def inference(self):
        """Evaluation mode, no graph recording, cached output tables."""
        was_training = self.training
        self.eval()
        self._cache = {}
        try:
            with no_grad():
                yield self
        finally:
            self._cache = None
            self.train(was_training)

    def uniform_(self):
        """Zero every output head so predictions are uniform over the support."""
        for m in self.modules():
            if isinstance(m, TiedHead):
                m.zero_()

    @staticmethod
    def target_weights(targets: np.ndarray, valid: np.ndarray):
        """Replace UNK/padding targets by 0 with weight 0."""
        ok = valid & (targets != UNK)
        return np.where(ok, targets, 0), ok.astype(np.float64)

    # --- interface -------------------------------------------------------
    def loss(self, batch: Sequence[Example], rng: np.random.Generator) -> Tensor:
        raise NotImplementedError

    def batches(self, examples: Sequence[Example], rng: np.random.Generator, batch_size: int):
        """Yield training batches for one epoch (family-specific preparation)."""
        order = rng.permutation(len(examples))
        for start in range(0, len(order), batch_size):
            yield [examples[i] for i in order[start:start + batch_size]]

    def describe(self) -> dict:
        return {"family": self.config.family, "parameters": int(sum(p.size for p in self.parameters()))}
