import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from outfitbench.catalog import (
    ATTRIBUTES,
    CATEGORIES,
    DEFAULT_ATTR_DIMS,
    IMAGE_DIM,
    MASK,
    NUM_SPECIAL,
    STOP,
    UNK,
    VOCABULARIES,
    Action,
    ActionSequence,
    Catalog,
    Item,
    ItemFeaturizer,
    Outfit,
    Questionnaire,
    QUESTIONNAIRE_FIELDS,
    UserRecord,
    build_vocabulary,
    canonical_order,
    featurize,
    load_catalog,
    load_outfits,
    load_users,
    read_jsonl,
    save_catalog,
    save_outfits,
    save_users,
)
from outfitbench.errors import ConfigurationError, DataError, InputError


def make_item(item_id, category="top", rng=None, **codes):
    rng = rng or np.random.default_rng(0)
    attrs = {a: 0 for a in ATTRIBUTES}
    attrs["category"] = CATEGORIES.index(category)
    attrs.update(codes)
    return Item(item_id, image_vec=rng.normal(size=IMAGE_DIM), **attrs)


def outfits_from_counts(counts):
    """Pair each occurrence with a unique filler so every count is exact."""
    out = []
    k = 0
    for iid, c in counts.items():
        for _ in range(c):
            out.append(Outfit((iid, f"f{k}")))
            k += 1
    return out


class TestItem:
    def test_bad_code_rejected(self):
        with pytest.raises(InputError):
            make_item("x", brand=len(VOCABULARIES["brand"]))

    def test_image_dim_enforced(self):
        with pytest.raises(InputError):
            Item("x", 0, 0, 0, 0, 0, 0, 0, np.zeros(IMAGE_DIM - 1))

    def test_record_round_trip(self):
        it = make_item("a7", "shoes", color=3, style=2)
        back = Item.from_record(it.to_record())
        assert back.codes() == it.codes() and back.style == 2
        np.testing.assert_array_equal(back.image_vec, it.image_vec)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(InputError):
            Catalog([make_item("a"), make_item("a")])


class TestOutfitAndUsers:
    @pytest.mark.parametrize("items", [("a",), tuple("abcdefgh"), ("a", "a", "b")])
    def test_invalid_outfits(self, items):
        with pytest.raises(InputError):
            Outfit(items)

    def test_questionnaire_requires_all_fields(self):
        answers = {k: (["black"] if k == "favorite_colors" else []) for k in ("favorite_colors",)}
        with pytest.raises(InputError):
            Questionnaire(answers)

    def test_questionnaire_rejects_unknown_value(self):
        answers = {k: ([] if k in ("favorite_brands", "favorite_colors", "nogo_categories") else v[0])
                   for k, v in QUESTIONNAIRE_FIELDS.items()}
        Questionnaire(answers)
        answers["hair_color"] = "green"
        with pytest.raises(InputError):
            Questionnaire(answers)

    def test_action_validation(self):
        with pytest.raises(InputError):
            Action("a", "purchase", 1)
        with pytest.raises(InputError):
            Action("a", "click", -1)


class TestVocabulary:
    def test_threshold_eight(self):
        v = build_vocabulary(outfits_from_counts({"A": 10, "B": 8, "C": 7}), threshold=8)
        assert v.item_ids == ("A", "B")
        assert len(v) == 2 + NUM_SPECIAL
        assert v.index("A") == NUM_SPECIAL and v.index("C") == UNK
        assert STOP == 0 and MASK == 1

    def test_threshold_one_keeps_all(self):
        outfits = outfits_from_counts({"A": 3, "B": 1})
        v = build_vocabulary(outfits, threshold=1)
        assert v.num_items == len({i for o in outfits for i in o})

    def test_order_by_frequency_then_id(self):
        v = build_vocabulary(outfits_from_counts({"b": 2, "a": 2, "c": 5}), threshold=2)
        assert v.item_ids == ("c", "a", "b")

    def test_empty_vocabulary_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            build_vocabulary(outfits_from_counts({"A": 1}), threshold=5)
        with pytest.raises(ConfigurationError):
            build_vocabulary([], threshold=0)

    def test_size_matches_independent_recount(self, corpus):
        outfits = corpus.outfits[:1000]
        seen = {}
        for o in outfits:
            for iid in o.items:
                seen[iid] = seen.get(iid, 0) + 1
        for threshold in (1, 3, 8):
            v = build_vocabulary(outfits, threshold)
            assert v.num_items == sum(1 for c in seen.values() if c >= threshold)
            assert all(seen[i] >= threshold for i in v.item_ids)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abcdefghij"), min_size=2, max_size=5, unique=True),
                    min_size=1, max_size=30), st.randoms(use_true_random=False))
    def test_order_independent_and_idempotent(self, lists, rnd):
        outfits = [Outfit(tuple(x)) for x in lists]
        v1 = build_vocabulary(outfits, 1)
        shuffled = list(outfits)
        rnd.shuffle(shuffled)
        v2 = build_vocabulary(shuffled, 1)
        assert v1 == v2 and v1.counts == v2.counts
        assert build_vocabulary(outfits, 1) == v1
        # bijective index map
        idx = v1.encode(v1.item_ids)
        np.testing.assert_array_equal(idx, np.arange(NUM_SPECIAL, len(v1)))
        assert [v1.item_at(i) for i in idx] == list(v1.item_ids)

    def test_item_at_rejects_specials(self):
        v = build_vocabulary(outfits_from_counts({"A": 1}), 1)
        with pytest.raises(InputError):
            v.item_at(STOP)


class TestFeaturize:
    def test_default_dim_is_196(self):
        f = ItemFeaturizer(np.random.default_rng(0))
        assert f.output_dim == IMAGE_DIM + sum(DEFAULT_ATTR_DIMS.values()) == 196
        assert featurize(make_item("a"), f).shape == (196,)

    def test_zero_tables_give_image_then_zeros(self):
        it = make_item("a", "dress", brand=5)
        tables = {a: np.zeros((len(VOCABULARIES[a]), DEFAULT_ATTR_DIMS[a])) for a in ATTRIBUTES}
        out = featurize(it, tables).data
        np.testing.assert_array_equal(out[:IMAGE_DIM], it.image_vec)
        np.testing.assert_array_equal(out[IMAGE_DIM:], 0.0)

    def test_brand_change_is_local_to_brand_slice(self):
        f = ItemFeaturizer(np.random.default_rng(1))
        rng = np.random.default_rng(2)
        vec = rng.normal(size=IMAGE_DIM)
        a = Item("a", 1, 3, 2, 0, 1, 4, 2, vec)
        b = Item("b", 1, 7, 2, 0, 1, 4, 2, vec)
        diff = featurize(a, f).data != featurize(b, f).data
        start = IMAGE_DIM + DEFAULT_ATTR_DIMS["category"]
        stop = start + DEFAULT_ATTR_DIMS["brand"]
        assert diff[start:stop].all()
        assert not diff[:start].any() and not diff[stop:].any()

    def test_both_routes_agree(self):
        f = ItemFeaturizer(np.random.default_rng(3))
        it = make_item("a", "pants", brand=9, color=4)
        tables = {a: t.table.data for a, t in zip(ATTRIBUTES, f.tables)}
        np.testing.assert_array_equal(featurize(it, f).data, featurize(it, tables).data)

    def test_unknown_code_rejected(self):
        f = ItemFeaturizer(np.random.default_rng(0))
        codes = np.zeros((1, len(ATTRIBUTES)), dtype=np.int64)
        codes[0, 1] = len(VOCABULARIES["brand"])
        with pytest.raises(InputError):
            f(codes, np.zeros((1, IMAGE_DIM)))
        small = {a: np.zeros((1, 2)) for a in ATTRIBUTES}
        with pytest.raises(InputError):
            featurize(make_item("a", brand=3), small)

    def test_injective_on_random_tables(self):
        f = ItemFeaturizer(np.random.default_rng(4))
        rng = np.random.default_rng(5)
        vec = np.zeros((200, IMAGE_DIM))
        codes = np.stack([rng.integers(len(VOCABULARIES[a]), size=200) for a in ATTRIBUTES], axis=1)
        out = f(codes, vec).data
        distinct_codes = {tuple(c) for c in codes}
        distinct_out = {tuple(np.round(r, 12)) for r in out}
        assert len(distinct_out) == len(distinct_codes)


class TestCanonicalOrder:
    @pytest.fixture
    def cat(self):
        return Catalog([make_item("S", "shoes"), make_item("T", "top"), make_item("T2", "top"),
                        make_item("J", "jacket"), make_item("A", "accessory")])

    def test_fixed_rank(self, cat):
        assert canonical_order(Outfit(("S", "T")), cat) == ["T", "S"]

    def test_ties_adjacent_by_id(self, cat):
        assert canonical_order(["T2", "S", "T", "J"], cat) == ["J", "T", "T2", "S"]

    @given(st.permutations(["S", "T", "T2", "J", "A"]))
    def test_permutation_invariant(self, perm):
        cat = Catalog([make_item("S", "shoes"), make_item("T", "top"), make_item("T2", "top"),
                       make_item("J", "jacket"), make_item("A", "accessory")])
        assert canonical_order(perm, cat) == ["J", "T", "T2", "S", "A"]

    def test_custom_rank(self, cat):
        assert canonical_order(["T", "S"], cat, rank=tuple(reversed(CATEGORIES))) == ["S", "T"]


class TestFiles:
    def test_round_trip(self, tmp_path, corpus):
        items = Catalog(corpus.catalog.items[:20])
        save_catalog(tmp_path / "c.jsonl", items)
        back = load_catalog(tmp_path / "c.jsonl")
        np.testing.assert_array_equal(back.codes, items.codes)
        np.testing.assert_array_equal(back.image, items.image)
        save_outfits(tmp_path / "o.jsonl", corpus.outfits[:10])
        assert load_outfits(tmp_path / "o.jsonl") == corpus.outfits[:10]
        users = corpus.questionnaire_users[:3] + corpus.click_users[:3]
        save_users(tmp_path / "u.jsonl", users)
        assert load_users(tmp_path / "u.jsonl") == users

    def test_header_checked(self, tmp_path):
        save_outfits(tmp_path / "o.jsonl", [Outfit(("a", "b"))])
        with pytest.raises(DataError):
            read_jsonl(tmp_path / "o.jsonl", "catalog")
        with pytest.raises(DataError):
            load_outfits(tmp_path / "missing.jsonl")

    def test_malformed_lines_are_data_errors(self, tmp_path):
        p = tmp_path / "u.jsonl"
        save_users(p, [UserRecord("u", ActionSequence((Action("a", "click", 1),)), (Outfit(("a", "b")),))])
        p.write_text(p.read_text() + "{not json\n")
        with pytest.raises(DataError):
            load_users(p)
        p.write_text(p.read_text().splitlines()[0] + '\n{"user_id": "x", "outfits": []}\n')
        with pytest.raises(DataError):
            load_users(p)
