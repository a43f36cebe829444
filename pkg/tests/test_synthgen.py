from collections import Counter

import numpy as np
import pytest
from scipy import stats

from outfitbench.catalog import CATEGORIES, COLORS, Outfit
from outfitbench.errors import InputError
from outfitbench.evaluation import logistic_floor_auc
from outfitbench.rng import stream
from outfitbench.synthgen import (
    CorpusConfig,
    Oracle,
    StyleWorld,
    generate_catalog,
    generate_click_dataset,
    generate_corpus,
    generate_outfits,
    generate_questionnaire_dataset,
    item_centroid,
    manifest_json,
    negative_sample,
    oracle_compatible,
    replace_one,
    sample_user,
)


@pytest.fixture(scope="module")
def world():
    return StyleWorld()


@pytest.fixture(scope="module")
def big(world):
    cat = generate_catalog(world, 5000, 0)
    return cat, generate_outfits(world, cat, 10000, 0)


class TestStyleWorld:
    def test_default_templates_contain_shoes(self, world):
        assert all("shoes" in t and len(t) <= 7 for t in world.templates)
        assert all(world.palettes)

    def test_invalid_world(self):
        with pytest.raises(InputError):
            StyleWorld(palettes=((),))
        with pytest.raises(InputError):
            StyleWorld(templates=(("top", "pants"),))

    def test_cycle_distance(self, world):
        assert world.style_distance(0, world.num_styles - 1) == 1
        assert world.style_distance(0, 4) == 4
        assert world.styles_compatible([2, 3, 3])
        assert not world.styles_compatible([1, 2, 3])

    def test_describe_round_trip(self, world):
        assert StyleWorld.from_dict(world.describe()) == world

    def test_template_weights_hit_target(self, world):
        w = world.template_weights()
        sizes = np.array([len(t) for t in world.templates])
        assert w.sum() == pytest.approx(1.0)
        assert float(w @ sizes) == pytest.approx(world.target_mean_length, abs=1e-6)
        with pytest.raises(InputError):
            StyleWorld(target_mean_length=9.0).template_weights()


class TestCatalog:
    def test_one_per_category_at_centroid(self):
        w = StyleWorld(image_noise=0.0)
        cat = generate_catalog(w, len(CATEGORIES), 3)
        assert sorted(it.category for it in cat.items) == list(range(len(CATEGORIES)))
        for it in cat.items:
            np.testing.assert_allclose(it.image_vec, item_centroid(w, it.style, it.color, it.category),
                                       atol=5e-7)

    def test_too_small(self, world):
        with pytest.raises(InputError):
            generate_catalog(world, len(CATEGORIES) - 1, 0)

    def test_deterministic(self, world):
        a = generate_catalog(world, 300, 7)
        b = generate_catalog(world, 300, 7)
        assert [it.to_record() for it in a.items] == [it.to_record() for it in b.items]
        c = generate_catalog(world, 300, 8)
        assert [it.to_record() for it in a.items] != [it.to_record() for it in c.items]

    def test_style_counts_uniform(self, big, world):
        cat, _ = big
        counts = np.bincount([it.style for it in cat.items], minlength=world.num_styles)
        expected = len(cat) / world.num_styles
        sigma = np.sqrt(len(cat) * (1 / world.num_styles) * (1 - 1 / world.num_styles))
        assert np.all(np.abs(counts - expected) < 3 * sigma)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_visual_similarity_tracks_style(self, big):
        cat, _ = big
        styles = np.array([it.style for it in cat.items[:600]])
        img = cat.image[:600]
        d = ((img[:, None, :] - img[None, :, :]) ** 2).sum(-1)
        same = styles[:, None] == styles[None, :]
        off = ~np.eye(len(styles), dtype=bool)
        assert d[same & off].mean() < d[~same].mean()


class TestOracle:
    def test_generated_outfits_pass(self, big, world):
        cat, outfits = big
        assert len(outfits) == 10000
        oracle = Oracle(world, cat)
        assert all(oracle(o) for o in outfits)

    def test_off_palette_colour_fails(self, big, world):
        cat, outfits = big
        o = outfits[0]
        target = cat[o.items[0]]
        others = {cat[i].color for i in o.items[1:]}
        bad_colors = [c for c in range(len(COLORS)) if not world.colors_in_palette(others | {c})]
        swap = next(it for it in cat.items
                    if it.color in bad_colors and it.category == target.category and it.gender == target.gender
                    and it.season == target.season and it.style == target.style)
        assert not oracle_compatible(Outfit((swap.item_id,) + o.items[1:]), world, cat)

    def test_random_base_rate_small(self, big, world):
        cat, _ = big
        oracle = Oracle(world, cat)
        rng = stream(0, "base-rate")
        ids = [it.item_id for it in cat.items]
        hits = sum(oracle([ids[j] for j in rng.choice(len(ids), 5, replace=False)]) for _ in range(100_000))
        assert hits / 100_000 < 0.02

    def test_unknown_item(self, big, world):
        cat, _ = big
        with pytest.raises(InputError):
            oracle_compatible(Outfit(("nope", cat.items[0].item_id)), world, cat)

    def test_pure(self, big, world):
        cat, outfits = big
        oracle = Oracle(world, cat)
        first = [oracle(o) for o in outfits[:50]]
        assert first == [oracle(o) for o in outfits[:50]]


class TestOutfits:
    def test_mean_length(self, big):
        _, outfits = big
        assert abs(np.mean([len(o) for o in outfits]) - 4.7) <= 0.3

    def test_deterministic(self, world, big):
        cat, outfits = big
        assert generate_outfits(world, cat, 200, 0)[:50] == generate_outfits(world, cat, 50, 0)

    def test_user_palette_respected(self):
        w = StyleWorld(slip_rate=0.0)
        cat = generate_catalog(w, 3000, 1)
        rng = stream(1, "users")
        red = COLORS.index("red")
        checked = 0
        for k in range(60):
            u = sample_user(w, rng, f"u{k}", noise=0.0)
            if red not in w.palette_codes(u.palette):
                continue
            for o in generate_outfits(w, cat, 5, 1, user=u):
                assert all(cat[i].color in w.palette_codes(u.palette) for i in o.items)
                assert all(u.matches(cat[i], w) for i in o.items)
                checked += 1
        assert checked > 20

    def test_infeasible_template_skipped(self, world, caplog):
        cat = generate_catalog(world, len(CATEGORIES), 0)
        out = generate_outfits(world, cat, 3, 0, max_retries=5)
        assert all(Oracle(world, cat)(o) for o in out)
        assert len(out) < 3 and "skipped" in caplog.text


class TestNegatives:
    def test_swap_count_uniform(self, big):
        cat, outfits = big
        o = next(x for x in outfits if len(x) == 5)
        rng = stream(0, "swap-count")
        counts = Counter()
        for _ in range(100_000):
            neg = negative_sample(o, cat, rng=rng)
            counts[sum(a != b for a, b in zip(o.items, neg.items))] += 1
        freqs = np.array([counts[k] for k in range(1, 6)]) / 100_000
        assert set(counts) == {1, 2, 3, 4, 5}
        np.testing.assert_allclose(freqs, 0.2, atol=0.01)

    def test_shortest_outfit_always_changes(self, big):
        cat, _ = big
        o = Outfit(tuple(it.item_id for it in cat.items[:2]))
        rng = stream(1, "short")
        for _ in range(200):
            neg = negative_sample(o, cat, rng=rng)
            assert 1 <= sum(a != b for a, b in zip(o.items, neg.items)) <= 2
            assert len(set(neg.items)) == 2

    def test_catalog_too_small(self, world):
        cat = generate_catalog(world, len(CATEGORIES), 0)
        with pytest.raises(InputError):
            negative_sample(Outfit(tuple(it.item_id for it in cat.items)), cat, seed=0)

    def test_replace_one_hamming_one(self, big):
        cat, outfits = big
        pool = [it.item_id for it in cat.items]
        rng = stream(2, "replace")
        for o in outfits[:300]:
            neg = replace_one(o, pool, rng=rng)
            assert sum(a != b for a, b in zip(o.items, neg.items)) == 1

    def test_planted_signal_is_learnable(self, world):
        cat = generate_catalog(world, 5000, 0)
        pos = generate_outfits(world, cat, 20000, 0)
        oracle = Oracle(world, cat)
        rng = stream(0, "lr-negatives")
        neg = [n for n in (negative_sample(o, cat, rng=rng) for o in pos) if not oracle(n)]
        cut_p, cut_n = int(0.8 * len(pos)), int(0.8 * len(neg))
        auc = logistic_floor_auc(pos[:cut_p], neg[:cut_n], pos[cut_p:], neg[cut_n:], cat)
        assert auc >= 0.8


class TestUsers:
    def test_click_constraints(self, world):
        cat = generate_catalog(world, 800, 4)
        users = generate_click_dataset(world, cat, 300, 4)
        assert 200 <= len(users) <= 300
        counts = Counter(a.item_id for u in users for a in u.context.actions)
        for u in users:
            assert len(u.context) >= 5
            target = u.outfits[0]
            assert sum(cat.category_of(i) != "accessory" for i in target.items) >= 4
            assert Oracle(world, cat)(target)
            assert u.anchor in target.items
        # every item left in the emitted sequences occurs at least three times
        assert min(counts.values()) >= 3

    def test_noise_free_styles_agree(self):
        w = StyleWorld(slip_rate=0.0)
        cat = generate_catalog(w, 2000, 0)
        users = generate_click_dataset(w, cat, 200, 0, noise=0.0)
        for u in users:
            mode = Counter(cat[i].style for i in u.context.item_ids()).most_common(1)[0][0]
            assert all(w.style_distance(mode, cat[i].style) <= 1 for i in u.outfits[0].items)

    def test_click_counts_stable(self, world, big):
        cat, _ = big
        a = generate_click_dataset(world, cat, 150, 9)
        b = generate_click_dataset(world, cat, 150, 9)
        assert a == b
        assert len({u.outfits[0].key() for u in a}) == len({u.outfits[0].key() for u in b})

    def test_questionnaire_users(self, world, big):
        cat, _ = big
        users = generate_questionnaire_dataset(world, cat, 40, 2)
        assert len(users) >= 35
        oracle = Oracle(world, cat)
        for u in users:
            assert u.kind == "questionnaire"
            assert len(u.context.answers) >= 10
            assert all(oracle(o) for o in u.outfits)
            nogo = u.context.answers["nogo_categories"]
            assert not any(cat.category_of(i) in nogo for o in u.outfits for i in o.items)


class TestCorpus:
    def test_manifest_deterministic(self):
        cfg = CorpusConfig(num_items=200, num_outfits=100, num_questionnaire_users=10, num_click_samples=10, seed=3)
        assert manifest_json(generate_corpus(cfg)) == manifest_json(generate_corpus(cfg))
        m = generate_corpus(cfg).manifest()
        assert m["counts"]["items"] == 200 and m["seeds"]["data"] == 3
