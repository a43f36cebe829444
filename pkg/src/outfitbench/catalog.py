"""Items, outfits, users, vocabularies, featurization and dataset files."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, InputError
from .nn import Embedding, Module, Tensor, concat

CATEGORIES = ("jacket", "sweater", "top", "dress", "pants", "shoes", "accessory")
COLORS = ("black", "white", "grey", "navy", "blue", "red", "pink", "green",
          "olive", "beige", "brown", "yellow")
SEASONS = ("spring", "summer", "autumn", "winter")
GENDERS = ("female", "male")
MATERIALS = ("cotton", "wool", "denim", "leather", "silk", "linen", "synthetic", "knit")
PATTERNS = ("plain", "striped", "checked", "floral", "dotted", "printed")
BRANDS = tuple(f"brand_{i:02d}" for i in range(40))

ATTRIBUTES = ("category", "brand", "color", "season", "gender", "material", "pattern")
VOCABULARIES = {
    "category": CATEGORIES, "brand": BRANDS, "color": COLORS, "season": SEASONS,
    "gender": GENDERS, "material": MATERIALS, "pattern": PATTERNS,
}
DEFAULT_ATTR_DIMS = {"category": 16, "brand": 16, "color": 8, "season": 8,
                     "gender": 4, "material": 8, "pattern": 8}
IMAGE_DIM = 128
DEFAULT_CATEGORY_RANK = CATEGORIES
CORE_CATEGORIES = frozenset(c for c in CATEGORIES if c != "accessory")

EVENT_TYPES = ("click", "wishlist", "cart")
MIN_OUTFIT_LEN, MAX_OUTFIT_LEN = 2, 7
SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class Item:
    item_id: str
    category: int
    brand: int
    color: int
    season: int
    gender: int
    material: int
    pattern: int
    image_vec: np.ndarray
    style: int | None = None  # generator-only latent cluster

    def __post_init__(self):
        for name in ATTRIBUTES:
            code = getattr(self, name)
            if not 0 <= int(code) < len(VOCABULARIES[name]):
                raise InputError(f"item {self.item_id}: {name} code {code} not in dictionary")
        vec = np.asarray(self.image_vec, dtype=np.float64)
        if vec.shape != (IMAGE_DIM,):
            raise InputError(f"item {self.item_id}: image_vec must have {IMAGE_DIM} entries")
        object.__setattr__(self, "image_vec", vec)

    def codes(self) -> tuple[int, ...]:
        return tuple(int(getattr(self, a)) for a in ATTRIBUTES)

    def attribute(self, name: str) -> str:
        return VOCABULARIES[name][getattr(self, name)]

    def to_record(self) -> dict:
        rec = {"item_id": self.item_id}
        rec.update({a: self.attribute(a) for a in ATTRIBUTES})
        rec["image_vec"] = [float(v) for v in self.image_vec]
        if self.style is not None:
            rec["style"] = int(self.style)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Item":
        try:
            codes = {a: VOCABULARIES[a].index(rec[a]) for a in ATTRIBUTES}
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad item record {rec.get('item_id')!r}: {exc}") from exc
        return cls(item_id=str(rec["item_id"]), image_vec=np.asarray(rec["image_vec"]),
                   style=rec.get("style"), **codes)


@dataclass(frozen=True)
class Outfit:
    items: tuple[str, ...]
    source: str = "curated"

    def __post_init__(self):
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if len(set(items)) != len(items):
            raise InputError(f"outfit has duplicate items: {items}")
        if not MIN_OUTFIT_LEN <= len(items) <= MAX_OUTFIT_LEN:
            raise InputError(f"outfit length {len(items)} outside [{MIN_OUTFIT_LEN}, {MAX_OUTFIT_LEN}]")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def key(self) -> frozenset:
        return frozenset(self.items)


@dataclass(frozen=True)
class Action:
    item_id: str
    event: str
    age_days: int

    def __post_init__(self):
        if self.event not in EVENT_TYPES:
            raise InputError(f"unknown event type {self.event!r}")
        if self.age_days < 0:
            raise InputError("action age must be non-negative")


@dataclass(frozen=True)
class ActionSequence:
    actions: tuple[Action, ...]

    def __len__(self):
        return len(self.actions)

    def item_ids(self) -> list[str]:
        return [a.item_id for a in self.actions]


QUESTIONNAIRE_FIELDS = {
    "favorite_brands": BRANDS,
    "favorite_colors": COLORS,
    "nogo_categories": CATEGORIES,
    "gender": GENDERS,
    "height_band": ("short", "medium", "tall"),
    "weight_band": ("light", "medium", "heavy"),
    "occasion": ("everyday", "office", "evening", "outdoor"),
    "price_band": ("budget", "mid", "premium"),
    "shoe_size": ("36-38", "39-41", "42-44", "45-47"),
    "hair_color": ("black", "brown", "blond", "red", "grey"),
    "style_archetype": tuple(f"archetype_{i}" for i in range(8)),
}
LIST_FIELDS = ("favorite_brands", "favorite_colors", "nogo_categories")


@dataclass(frozen=True)
class Questionnaire:
    answers: dict

    def __post_init__(self):
        missing = set(QUESTIONNAIRE_FIELDS) - set(self.answers)
        if missing:
            raise InputError(f"questionnaire missing fields {sorted(missing)}")
        for name, allowed in QUESTIONNAIRE_FIELDS.items():
            value = self.answers[name]
            values = value if name in LIST_FIELDS else [value]
            for v in values:
                if v not in allowed:
                    raise InputError(f"questionnaire field {name}: {v!r} not in dictionary")

    def tokens(self) -> list[tuple[str, int]]:
        """``(field, code)`` pairs, one per answered value."""
        out = []
        for name, allowed in QUESTIONNAIRE_FIELDS.items():
            value = self.answers[name]
            for v in (value if name in LIST_FIELDS else [value]):
                out.append((name, allowed.index(v)))
        return out


@dataclass(frozen=True)
class UserRecord:
    """A user context paired with outfit labels."""

    user_id: str
    context: ActionSequence | Questionnaire
    outfits: tuple[Outfit, ...]
    timestamp: int = 0
    anchor: str | None = None

    @property
    def kind(self) -> str:
        return "actions" if isinstance(self.context, ActionSequence) else "questionnaire"


class Catalog:
    """Immutable item collection with dense attribute/feature arrays."""

    def __init__(self, items: Sequence[Item]):
        self.items = tuple(items)
        self._index = {it.item_id: i for i, it in enumerate(self.items)}
        if len(self._index) != len(self.items):
            raise InputError("catalog contains duplicate item ids")
        n = len(self.items)
        self.codes = np.array([it.codes() for it in self.items], dtype=np.int64).reshape(n, len(ATTRIBUTES))
        self.image = np.array([it.image_vec for it in self.items], dtype=np.float64).reshape(n, IMAGE_DIM)
        self.codes.flags.writeable = False
        self.image.flags.writeable = False

    def __len__(self):
        return len(self.items)

    def __contains__(self, item_id):
        return item_id in self._index

    def index(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise InputError(f"unknown item {item_id!r}") from None

    def indices(self, item_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index(i) for i in item_ids], dtype=np.int64)

    def __getitem__(self, item_id: str) -> Item:
        return self.items[self.index(item_id)]

    def category_of(self, item_id: str) -> str:
        return CATEGORIES[self[item_id].category]


# ---------------------------------------------------------------- vocabulary
STOP, MASK = 0, 1
UNK = -1
NUM_SPECIAL = 2


@dataclass(frozen=True)
class Vocabulary:
    """Item ids mapped to contiguous indices after two reserved tokens.

    Index 0 is the stop token, index 1 the mask token, and items follow in
    order of descending frequency (ties by item id).  Lookups of unknown
    items return ``UNK`` (-1), which is never a valid prediction target.
    """

    item_ids: tuple[str, ...]
    counts: dict = field(compare=False)
    threshold: int = 8

    def __post_init__(self):
        object.__setattr__(self, "_lookup", {iid: i + NUM_SPECIAL for i, iid in enumerate(self.item_ids)})

    def __len__(self):
        return len(self.item_ids) + NUM_SPECIAL

    @property
    def size(self) -> int:
        return len(self)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def __contains__(self, item_id):
        return item_id in self._lookup

    def index(self, item_id: str) -> int:
        return self._lookup.get(item_id, UNK)

    def encode(self, item_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index(i) for i in item_ids], dtype=np.int64)

    def item_at(self, index: int) -> str:
        if index < NUM_SPECIAL or index >= len(self):
            raise InputError(f"index {index} is not an item token")
        return self.item_ids[index - NUM_SPECIAL]

    def catalog_indices(self, catalog: Catalog) -> np.ndarray:
        """Catalog row of every item token, in vocabulary order."""
        return catalog.indices(self.item_ids)


def build_vocabulary(outfits: Iterable[Outfit], threshold: int = 8) -> Vocabulary:
    if threshold < 1:
        raise ConfigurationError("vocabulary threshold must be at least 1")
    counts = Counter()
    for outfit in outfits:
        counts.update(outfit.items)
    kept = sorted((iid for iid, c in counts.items() if c >= threshold), key=lambda i: (-counts[i], i))
    if not kept:
        raise ConfigurationError(f"no item occurs at least {threshold} times")
    return Vocabulary(tuple(kept), {i: counts[i] for i in kept}, threshold)


def canonical_order(outfit: Outfit | Iterable[str], catalog: Catalog,
                    rank: Sequence[str] = DEFAULT_CATEGORY_RANK) -> list[str]:
    """Items sorted head to toe by category rank, ties broken by item id."""
    position = {c: i for i, c in enumerate(rank)}
    return sorted(outfit, key=lambda iid: (position[catalog.category_of(iid)], iid))


# ---------------------------------------------------------------- featurize
class ItemFeaturizer(Module):
    """Learned attribute embeddings concatenated after the image vector."""

    def __init__(self, rng: np.random.Generator, dims: dict | None = None, dtype=np.float64):
        self.dims = dict(DEFAULT_ATTR_DIMS if dims is None else dims)
        self.dtype = dtype
        self.tables = [Embedding(len(VOCABULARIES[a]), self.dims[a], rng, dtype) for a in ATTRIBUTES]

    @property
    def output_dim(self) -> int:
        return IMAGE_DIM + sum(self.dims[a] for a in ATTRIBUTES)

    def forward(self, codes: np.ndarray, image: np.ndarray) -> Tensor:
        codes = np.asarray(codes)
        for j, a in enumerate(ATTRIBUTES):
            col = codes[..., j]
            if col.size and (col.min() < 0 or col.max() >= len(VOCABULARIES[a])):
                raise InputError(f"unknown {a} code")
        parts = [Tensor(np.asarray(image, dtype=self.dtype))]
        parts += [table(codes[..., j]) for j, table in enumerate(self.tables)]
        return concat(parts, axis=-1)

    def rows(self, catalog: Catalog, rows: np.ndarray) -> Tensor:
        rows = np.asarray(rows, dtype=np.int64)
        return self(catalog.codes[rows], catalog.image[rows])


def featurize(item: Item, tables) -> Tensor:
    """Feature vector ``[image_vec | attribute embeddings]`` of one item.

    ``tables`` is an :class:`ItemFeaturizer` or a mapping from attribute
    name to an embedding matrix.
    """
    if isinstance(tables, ItemFeaturizer):
        return tables(np.array(item.codes()), item.image_vec)
    parts = [item.image_vec]
    for a, code in zip(ATTRIBUTES, item.codes()):
        table = np.asarray(tables[a])
        if code >= len(table):
            raise InputError(f"{a} code {code} has no embedding row")
        parts.append(table[code])
    return Tensor(np.concatenate(parts))


# ---------------------------------------------------------------- file I/O
FILE_KINDS = ("catalog", "outfits", "users")


def _header(kind: str) -> dict:
    return {"schema": f"outfitbench/{kind}", "version": SCHEMA_VERSION}


def write_jsonl(path, kind: str, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_header(kind), sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    return path


def read_jsonl(path, kind: str) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing dataset file {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    try:
        header = json.loads(lines[0]) if lines else None
        if header != _header(kind):
            raise DataError(f"{path}: expected header {_header(kind)}, found {header}")
        return [json.loads(line) for line in lines[1:] if line.strip()]
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed record ({exc})") from exc


def outfit_record(outfit: Outfit) -> dict:
    return {"items": list(outfit.items), "source": outfit.source}


def outfit_from_record(rec: dict) -> Outfit:
    return Outfit(tuple(rec["items"]), rec.get("source", "curated"))


def user_record(user: UserRecord) -> dict:
    rec = {"user_id": user.user_id, "timestamp": user.timestamp,
           "outfits": [outfit_record(o) for o in user.outfits]}
    if user.anchor is not None:
        rec["anchor"] = user.anchor
    if isinstance(user.context, ActionSequence):
        rec["actions"] = [[a.item_id, a.event, a.age_days] for a in user.context.actions]
    else:
        rec["questionnaire"] = user.context.answers
    return rec


def user_from_record(rec: dict) -> UserRecord:
    if "actions" in rec:
        ctx = ActionSequence(tuple(Action(str(i), str(e), int(a)) for i, e, a in rec["actions"]))
    elif "questionnaire" in rec:
        ctx = Questionnaire(dict(rec["questionnaire"]))
    else:
        raise DataError(f"user {rec.get('user_id')!r} has neither actions nor questionnaire")
    return UserRecord(str(rec["user_id"]), ctx, tuple(outfit_from_record(o) for o in rec["outfits"]),
                      int(rec.get("timestamp", 0)), rec.get("anchor"))


def save_catalog(path, catalog: Catalog) -> Path:
    return write_jsonl(path, "catalog", (it.to_record() for it in catalog.items))


def load_catalog(path) -> Catalog:
    try:
        return Catalog([Item.from_record(r) for r in read_jsonl(path, "catalog")])
    except (InputError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_outfits(path, outfits: Iterable[Outfit]) -> Path:
    return write_jsonl(path, "outfits", (outfit_record(o) for o in outfits))


def load_outfits(path) -> list[Outfit]:
    try:
        return [outfit_from_record(r) for r in read_jsonl(path, "outfits")]
    except (InputError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_users(path, users: Iterable[UserRecord]) -> Path:
    return write_jsonl(path, "users", (user_record(u) for u in users))


def load_users(path) -> list[UserRecord]:
    try:
        return [user_from_record(r) for r in read_jsonl(path, "users")]
    except (InputError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
