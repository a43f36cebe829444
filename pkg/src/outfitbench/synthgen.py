"""Synthetic catalogs, outfits and users with a planted compatibility rule.

The rule lives in :class:`Oracle`.  An outfit is compatible iff all items
share gender and season group, their latent styles are pairwise within one
step on the style cycle, all colours fit inside one palette and the
category multiset equals a template.  Outfit generators propose outfits the
way a stylist would and keep only proposals the oracle accepts, so the
sampler never has to encode the rule itself.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import weakref
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .catalog import (
    BRANDS,
    CATEGORIES,
    COLORS,
    EVENT_TYPES,
    GENDERS,
    IMAGE_DIM,
    MATERIALS,
    PATTERNS,
    QUESTIONNAIRE_FIELDS,
    SEASONS,
    Action,
    ActionSequence,
    Catalog,
    Item,
    Outfit,
    Questionnaire,
    UserRecord,
)
from .errors import InputError
from .rng import stream

log = logging.getLogger(__name__)

CAT = {c: i for i, c in enumerate(CATEGORIES)}
SEASON_GROUP = (0, 0, 1, 1)  # spring/summer warm, autumn/winter cold
SEASON_GROUP_NAMES = ("warm", "cold")
OPTIONAL = ("jacket", "sweater", "accessory")
OCCASION_GROUP = {"everyday": 0, "evening": 0, "office": 1, "outdoor": 1}

DEFAULT_PALETTES = (
    ("black", "white", "grey", "red"),
    ("navy", "white", "beige", "brown"),
    ("blue", "grey", "white", "yellow"),
    ("pink", "white", "beige", "grey"),
    ("green", "olive", "brown", "beige"),
    ("black", "navy", "red", "yellow"),
)


def _default_templates() -> tuple[tuple[str, ...], ...]:
    out = []
    for base in (("top", "pants", "shoes"), ("dress", "shoes")):
        for r in range(len(OPTIONAL) + 1):
            for extra in itertools.combinations(OPTIONAL, r):
                out.append(tuple(sorted(base + extra, key=CAT.__getitem__)))
    return tuple(out)


@dataclass
class StyleWorld:
    """Parameters of the planted rule and of the stylist proposal."""

    num_styles: int = 8
    palettes: tuple = DEFAULT_PALETTES
    style_palettes: tuple = ()
    brand_style: tuple = ()
    brand_affinity: float = 0.85
    templates: tuple = ()
    target_mean_length: float = 4.7
    image_noise: float = 0.03
    slip_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not self.templates:
            self.templates = _default_templates()
        if not self.style_palettes:
            self.style_palettes = tuple((s % len(self.palettes), (s + 3) % len(self.palettes))
                                        for s in range(self.num_styles))
        if not self.brand_style:
            self.brand_style = tuple(b % self.num_styles for b in range(len(BRANDS)))
        self.palettes = tuple(tuple(p) for p in self.palettes)
        self.templates = tuple(tuple(t) for t in self.templates)
        for p in self.palettes:
            if not p:
                raise InputError("palettes must be non-empty")
        for t in self.templates:
            if "shoes" not in t or len(t) > 7:
                raise InputError(f"invalid template {t}")
        self._palette_codes = [frozenset(COLORS.index(c) for c in p) for p in self.palettes]
        self._template_keys = {tuple(sorted(CAT[c] for c in t)) for t in self.templates}

    # --- the planted rule ---------------------------------------------------
    def style_distance(self, a: int, b: int) -> int:
        d = abs(int(a) - int(b)) % self.num_styles
        return min(d, self.num_styles - d)

    def styles_compatible(self, styles: Sequence[int]) -> bool:
        return all(self.style_distance(a, b) <= 1 for a, b in itertools.combinations(set(styles), 2))

    def colors_in_palette(self, colors: Sequence[int]) -> bool:
        cs = set(int(c) for c in colors)
        return any(cs <= p for p in self._palette_codes)

    def template_matches(self, categories: Sequence[int]) -> bool:
        return tuple(sorted(int(c) for c in categories)) in self._template_keys

    def palette_codes(self, p: int) -> frozenset:
        return self._palette_codes[p]

    def template_weights(self) -> np.ndarray:
        """Exponentially tilted template weights hitting the target mean length."""
        cached = getattr(self, "_weights", None)
        if cached is not None and cached[0] == (self.templates, self.target_mean_length):
            return cached[1].copy()
        sizes = np.array([len(t) for t in self.templates], dtype=float)

        def mean_for(lam):
            w = np.exp(lam * (sizes - sizes.mean()))
            return float((w * sizes).sum() / w.sum())

        lo, hi = -20.0, 20.0
        if not mean_for(lo) <= self.target_mean_length <= mean_for(hi):
            raise InputError(f"target mean length {self.target_mean_length} unreachable")
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if mean_for(mid) < self.target_mean_length:
                lo = mid
            else:
                hi = mid
        w = np.exp(0.5 * (lo + hi) * (sizes - sizes.mean()))
        w = w / w.sum()
        self._weights = ((self.templates, self.target_mean_length), w)
        return w.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "StyleWorld":
        d = dict(d)
        for key in ("palettes", "style_palettes", "templates"):
            if key in d:
                d[key] = tuple(tuple(x) for x in d[key])
        if "brand_style" in d:
            d["brand_style"] = tuple(d["brand_style"])
        return cls(**d)

    def describe(self) -> dict:
        d = asdict(self)
        d["templates"] = [list(t) for t in self.templates]
        d["palettes"] = [list(p) for p in self.palettes]
        d["style_palettes"] = [list(p) for p in self.style_palettes]
        d["brand_style"] = list(self.brand_style)
        return d


def season_group(season_code: int) -> int:
    return SEASON_GROUP[int(season_code)]


class Oracle:
    """Exact compatibility check for outfits over one catalog."""

    def __init__(self, world: StyleWorld, catalog: Catalog):
        self.world = world
        self.catalog = catalog

    def __call__(self, outfit) -> bool:
        ids = outfit.items if isinstance(outfit, Outfit) else tuple(outfit)
        items = [self.catalog[i] for i in ids]
        if len(set(ids)) != len(ids):
            return False
        if any(it.style is None for it in items):
            raise InputError("oracle needs items with a latent style")
        w = self.world
        return (len({it.gender for it in items}) == 1
                and len({season_group(it.season) for it in items}) == 1
                and w.styles_compatible([it.style for it in items])
                and w.colors_in_palette([it.color for it in items])
                and w.template_matches([it.category for it in items]))


def oracle_compatible(outfit, world: StyleWorld, catalog: Catalog) -> bool:
    return Oracle(world, catalog)(outfit)


# ------------------------------------------------------------------ catalog
def _centroids(world: StyleWorld):
    rng = stream(world.seed, "centroids")
    scale = 1.0 / math.sqrt(IMAGE_DIM)
    style = rng.normal(0, scale, (world.num_styles, IMAGE_DIM))
    color = rng.normal(0, scale, (len(COLORS), IMAGE_DIM))
    cat = rng.normal(0, scale, (len(CATEGORIES), IMAGE_DIM))
    return style, color, cat


def item_centroid(world: StyleWorld, style: int, color: int, category: int) -> np.ndarray:
    s, c, k = _centroids(world)
    return s[style] + c[color] + k[category]


def generate_catalog(world: StyleWorld, num_items: int, seed: int) -> Catalog:
    """Draw ``num_items`` items; the first ``|categories|`` cover every category."""
    if num_items < len(CATEGORIES):
        raise InputError(f"need at least {len(CATEGORIES)} items to cover every category")
    rng = stream(seed, "catalog")
    style_c, color_c, cat_c = _centroids(world)
    brands_of = defaultdict(list)
    for b, s in enumerate(world.brand_style):
        brands_of[s].append(b)
    items = []
    for n in range(num_items):
        cat = n if n < len(CATEGORIES) else int(rng.integers(len(CATEGORIES)))
        style = int(rng.integers(world.num_styles))
        gender = 0 if CATEGORIES[cat] == "dress" else int(rng.integers(len(GENDERS)))
        season = int(rng.integers(len(SEASONS)))
        if rng.random() < 0.9:
            pal = world.style_palettes[style][int(rng.integers(2))]
            color = sorted(world.palette_codes(pal))[int(rng.integers(len(world.palettes[pal])))]
        else:
            color = int(rng.integers(len(COLORS)))
        if rng.random() < world.brand_affinity and brands_of[style]:
            brand = brands_of[style][int(rng.integers(len(brands_of[style])))]
        else:
            brand = int(rng.integers(len(BRANDS)))
        material = int(rng.integers(len(MATERIALS)))
        pattern = int(rng.integers(len(PATTERNS)))
        vec = style_c[style] + color_c[color] + cat_c[cat]
        if world.image_noise > 0:
            vec = vec + rng.normal(0, world.image_noise, IMAGE_DIM)
        items.append(Item(f"i{n:05d}", cat, brand, color, season, gender, material, pattern,
                          np.round(vec, 6), style))
    return Catalog(items)


# ------------------------------------------------------------------ outfits
@dataclass
class SyntheticUser:
    user_id: str
    style: int
    brands: tuple
    palette: int
    gender: int
    season_group: int
    occasion: str
    nogo: str | None = None
    noise: float = 0.1
    colors: tuple = ()

    def matches(self, item: Item, world: StyleWorld) -> bool:
        """Item fits the user's preferred style neighbourhood and palette."""
        return (world.style_distance(item.style, self.style) <= 1
                and item.color in world.palette_codes(self.palette)
                and item.gender == self.gender)


class _Pools:
    """Items bucketed by (category, gender, season group, style, colour)."""

    def __init__(self, catalog: Catalog):
        self.cells = defaultdict(list)
        self.by_category = defaultdict(list)
        self.by_cgs = defaultdict(list)
        for idx, it in enumerate(catalog.items):
            sg = season_group(it.season)
            self.cells[(it.category, it.gender, sg, it.style, it.color)].append(idx)
            self.by_category[it.category].append(idx)
            self.by_cgs[(it.category, it.gender, sg)].append(idx)

    def pool(self, cat, gender, sg, styles, colors) -> list[int]:
        out = []
        for s in sorted(set(styles)):
            for c in sorted(colors):
                out.extend(self.cells.get((cat, gender, sg, s, c), ()))
        return out


_POOL_CACHE: "weakref.WeakKeyDictionary[Catalog, _Pools]" = weakref.WeakKeyDictionary()


def _pools_for(catalog: Catalog) -> _Pools:
    if catalog not in _POOL_CACHE:
        _POOL_CACHE[catalog] = _Pools(catalog)
    return _POOL_CACHE[catalog]


def _propose(rng, world: StyleWorld, catalog: Catalog, pools: _Pools, templates, weights,
             user: SyntheticUser | None) -> tuple[str, ...]:
    t = templates[int(rng.choice(len(templates), p=weights))]
    if user is not None:
        gender, sg, style = user.gender, user.season_group, user.style
        palette = user.palette
    else:
        gender = 0 if "dress" in t else int(rng.integers(len(GENDERS)))
        sg = int(rng.integers(2))
        style = int(rng.integers(world.num_styles))
        if rng.random() < 0.9:
            palette = world.style_palettes[style][int(rng.integers(2))]
        else:
            palette = int(rng.integers(len(world.palettes)))
    second = (style + int(rng.integers(-1, 2))) % world.num_styles
    colors = world.palette_codes(palette)
    chosen = []
    for cat_name in t:
        cat = CAT[cat_name]
        if rng.random() < world.slip_rate:
            pool = pools.by_category[cat]
        else:
            pool = pools.pool(cat, gender, sg, (style, second), colors)
            if user is not None and pool and rng.random() >= user.noise:
                preferred = [i for i in pool if catalog.items[i].brand in user.brands]
                pool = preferred or pool
            if not pool:
                pool = pools.by_cgs[(cat, gender, sg)] or pools.by_category[cat]
        chosen.append(catalog.items[pool[int(rng.integers(len(pool)))]].item_id)
    return tuple(chosen)


def generate_outfits(world: StyleWorld, catalog: Catalog, num_outfits: int, seed: int,
                     user: SyntheticUser | None = None, max_retries: int = 1000,
                     templates: Sequence[tuple] | None = None, source: str = "curated") -> list[Outfit]:
    """Stylist proposals filtered by the oracle (rejection sampling)."""
    oracle = Oracle(world, catalog)
    pools = _pools_for(catalog)
    rng = stream(seed, "outfits", user.user_id if user is not None else "")
    if templates is None:
        templates, weights = world.templates, world.template_weights()
    else:
        templates = tuple(templates)
        full = dict(zip(world.templates, world.template_weights()))
        weights = np.array([full.get(t, 1.0) for t in templates])
        weights = weights / weights.sum()
    if user is not None and user.nogo is not None:
        keep = [i for i, t in enumerate(templates) if user.nogo not in t]
        templates = tuple(templates[i] for i in keep)
        weights = np.asarray(weights)[keep]
        weights = weights / weights.sum()
    out = []
    for k in range(num_outfits):
        for _ in range(max_retries):
            ids = _propose(rng, world, catalog, pools, templates, weights, user)
            if len(set(ids)) == len(ids) and oracle(ids):
                out.append(Outfit(ids, source))
                break
        else:
            log.warning("outfit %d skipped: no compatible proposal in %d tries", k, max_retries)
    return out


def negative_sample(outfit: Outfit, catalog: Catalog, seed=None, rng=None) -> Outfit:
    """Swap ``k ~ U{1..n}`` positions for uniformly random catalog items."""
    rng = rng if rng is not None else stream(seed, "negative")
    n = len(outfit)
    if len(catalog) <= n:
        raise InputError("catalog must be larger than the outfit")
    k = int(rng.integers(1, n + 1))
    items = list(outfit.items)
    for pos in rng.choice(n, size=k, replace=False):
        while True:
            cand = catalog.items[int(rng.integers(len(catalog)))].item_id
            if cand != outfit.items[pos] and cand not in items:
                break
        items[pos] = cand
    return Outfit(tuple(items), "negative")


def replace_one(outfit: Outfit, candidates: Sequence[str], seed=None, rng=None) -> Outfit:
    """Replace one uniformly chosen position by a uniform draw from ``candidates``."""
    rng = rng if rng is not None else stream(seed, "replace")
    pos = int(rng.integers(len(outfit)))
    items = list(outfit.items)
    while True:
        cand = candidates[int(rng.integers(len(candidates)))]
        if cand not in items:
            break
    items[pos] = cand
    return Outfit(tuple(items), "negative")


# ------------------------------------------------------------------ users
def sample_user(world: StyleWorld, rng, user_id: str, noise: float = 0.1,
                nogo_rate: float = 0.3) -> SyntheticUser:
    style = int(rng.integers(world.num_styles))
    own = [b for b, s in enumerate(world.brand_style) if s == style]
    brands = tuple(sorted(int(b) for b in rng.choice(own, size=min(2, len(own)), replace=False)))
    palette = world.style_palettes[style][int(rng.integers(2))]
    gender = int(rng.integers(len(GENDERS)))
    occasion = QUESTIONNAIRE_FIELDS["occasion"][int(rng.integers(4))]
    nogo = OPTIONAL[int(rng.integers(len(OPTIONAL)))] if rng.random() < nogo_rate else None
    return SyntheticUser(user_id, style, brands, palette, gender, OCCASION_GROUP[occasion],
                         occasion, nogo, noise, tuple(sorted(world.palette_codes(palette))))


def _user_templates(world: StyleWorld, user: SyntheticUser, min_core: int = 0):
    out = []
    for t in world.templates:
        if user.gender == 1 and "dress" in t:
            continue
        if sum(c != "accessory" for c in t) < min_core:
            continue
        out.append(t)
    return out


def questionnaire_for(user: SyntheticUser, world: StyleWorld, rng) -> Questionnaire:
    f = QUESTIONNAIRE_FIELDS
    brands = [BRANDS[b] for b in user.brands]
    if rng.random() < user.noise:
        brands.append(BRANDS[int(rng.integers(len(BRANDS)))])
    palette = sorted(world.palette_codes(user.palette))
    colors = [COLORS[c] for c in rng.choice(palette, size=2, replace=False)]
    archetype = user.style if rng.random() >= user.noise else int(rng.integers(world.num_styles))
    shoe = int(rng.integers(0, 2)) + (2 if user.gender == 1 else 0)
    answers = {
        "favorite_brands": sorted(set(brands)),
        "favorite_colors": sorted(colors),
        "nogo_categories": [user.nogo] if user.nogo else [],
        "gender": GENDERS[user.gender],
        "height_band": f["height_band"][int(rng.integers(3))],
        "weight_band": f["weight_band"][int(rng.integers(3))],
        "occasion": user.occasion,
        "price_band": f["price_band"][int(rng.integers(3))],
        "shoe_size": f["shoe_size"][shoe],
        "hair_color": f["hair_color"][int(rng.integers(5))],
        "style_archetype": f["style_archetype"][archetype],
    }
    return Questionnaire(answers)


def generate_questionnaire_dataset(world: StyleWorld, catalog: Catalog, num_users: int, seed: int,
                                   outfits_per_user: int = 2, noise: float = 0.1) -> list[UserRecord]:
    rng = stream(seed, "questionnaire-users")
    records = []
    for u in range(num_users):
        uid = f"q{u:05d}"
        user = sample_user(world, rng, uid, noise)
        quest = questionnaire_for(user, world, rng)
        outfits = generate_outfits(world, catalog, outfits_per_user, seed, user=user,
                                   templates=_user_templates(world, user), source="personalized")
        if outfits:
            records.append(UserRecord(uid, quest, tuple(outfits), timestamp=int(rng.integers(30))))
    return records


def _action_items(world, catalog, user, pools, rng, length):
    ids = []
    colors = world.palette_codes(user.palette)
    styles = (user.style, (user.style + 1) % world.num_styles, (user.style - 1) % world.num_styles)
    while len(ids) < length:
        if rng.random() < user.noise:
            idx = int(rng.integers(len(catalog)))
        else:
            cat = int(rng.integers(len(CATEGORIES)))
            sg = user.season_group
            pool = pools.pool(cat, user.gender, sg, styles[:1] if rng.random() < 0.6 else styles, colors)
            if pool and rng.random() < 0.7:
                pool = [i for i in pool if catalog.items[i].brand in user.brands] or pool
            if not pool:
                continue
            idx = pool[int(rng.integers(len(pool)))]
        ids.append(catalog.items[idx].item_id)
    return ids


def generate_click_dataset(world: StyleWorld, catalog: Catalog, num_samples: int, seed: int,
                           noise: float = 0.1, min_actions: int = 5, max_actions: int = 15,
                           min_core_items: int = 4, min_item_count: int = 3) -> list[UserRecord]:
    """Action sequences paired with a target outfit drawn from the same user.

    Items seen fewer than ``min_item_count`` times across the emitted
    actions are dropped from the sequences, and samples left with fewer than
    ``min_actions`` actions are discarded, so slightly fewer than
    ``num_samples`` pairs may come back.
    """
    rng = stream(seed, "click-users")
    pools = _pools_for(catalog)
    raw = []
    oversample = int(math.ceil(num_samples * 1.25))
    for u in range(oversample):
        uid = f"c{u:05d}"
        user = sample_user(world, rng, uid, noise)
        templates = _user_templates(world, user, min_core_items)
        target = generate_outfits(world, catalog, 1, seed, user=user, templates=templates,
                                  source="personalized")
        if not target:
            continue
        length = int(rng.integers(min_actions, max_actions + 1))
        ids = _action_items(world, catalog, user, pools, rng, length)
        ages = np.sort(rng.integers(0, 30, size=length))[::-1]
        events = rng.choice(len(EVENT_TYPES), size=length, p=[0.7, 0.2, 0.1])
        actions = [Action(i, EVENT_TYPES[e], int(a)) for i, e, a in zip(ids, events, ages)]
        anchor_pool = [i for i in target[0].items if catalog[i].category != CAT["accessory"]]
        anchor = anchor_pool[int(rng.integers(len(anchor_pool)))]
        raw.append((uid, actions, target[0], int(rng.integers(30)), anchor))
    def prune(rows):
        # Dropping rare actions can make other items rare; repeat until nothing changes.
        while True:
            counts = Counter(a.item_id for _, actions, _, _, _ in rows for a in actions)
            out = []
            for uid, actions, target, ts, anchor in rows:
                kept = [a for a in actions if counts[a.item_id] >= min_item_count]
                if len(kept) >= min_actions:
                    out.append((uid, kept, target, ts, anchor))
            if [len(r[1]) for r in out] == [len(r[1]) for r in rows]:
                return out
            rows = out

    rows = prune(prune(raw)[:num_samples])
    return [UserRecord(uid, ActionSequence(tuple(actions)), (target,), ts, anchor)
            for uid, actions, target, ts, anchor in rows]


# ------------------------------------------------------------------ corpus
@dataclass
class CorpusConfig:
    num_items: int = 5000
    num_outfits: int = 20000
    num_questionnaire_users: int = 5000
    outfits_per_user: int = 2
    num_click_samples: int = 10000
    noise: float = 0.1
    seed: int = 0
    world: StyleWorld = field(default_factory=StyleWorld)


@dataclass
class Corpus:
    world: StyleWorld
    catalog: Catalog
    outfits: list
    questionnaire_users: list
    click_users: list
    config: CorpusConfig

    def manifest(self) -> dict:
        cfg = asdict(self.config)
        cfg.pop("world")
        counts = {
            "items": len(self.catalog),
            "outfits": len(self.outfits),
            "questionnaire_users": len(self.questionnaire_users),
            "click_samples": len(self.click_users),
            "mean_outfit_length": float(np.mean([len(o) for o in self.outfits])) if self.outfits else 0.0,
            "distinct_click_items": len({a.item_id for u in self.click_users for a in u.context.actions}),
            "distinct_target_outfits": len({u.outfits[0].key() for u in self.click_users}),
        }
        return {"seeds": {"data": self.config.seed}, "config": cfg, "counts": counts,
                "world": self.world.describe()}


def generate_corpus(config: CorpusConfig) -> Corpus:
    world = config.world
    catalog = generate_catalog(world, config.num_items, config.seed)
    outfits = generate_outfits(world, catalog, config.num_outfits, config.seed)
    quest = generate_questionnaire_dataset(world, catalog, config.num_questionnaire_users, config.seed,
                                           config.outfits_per_user, config.noise)
    clicks = generate_click_dataset(world, catalog, config.num_click_samples, config.seed, config.noise)
    return Corpus(world, catalog, outfits, quest, clicks, config)


def dataset_id(files: Sequence) -> str:
    """Content hash over dataset files (order-sensitive)."""
    h = hashlib.sha256()
    for path in files:
        with open(path, "rb") as fh:
            h.update(hashlib.sha256(fh.read()).digest())
    return h.hexdigest()[:16]


def manifest_json(corpus: Corpus) -> str:
    return json.dumps(corpus.manifest(), indent=2, sort_keys=True)
