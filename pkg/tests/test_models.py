import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from outfitbench.catalog import CATEGORIES, MASK, STOP
from outfitbench.errors import ConfigurationError, InputError, UsageError
from outfitbench.models import FAMILIES, ModelConfig, interaction_vector
from outfitbench.models.base import Example, PAPER_DEFAULTS
from outfitbench.nn import Tensor
from outfitbench.nn.gradcheck import check_gradients, kink_margin

from conftest import TINY, fixed_loss, jitter

SEQUENCE_FAMILIES = ("lstm", "gpt", "bert", "ctx_gpt", "ctx_bert", "transformer", "s2s_lstm")


class TestConfig:
    def test_paper_defaults(self):
        gpt = ModelConfig.for_family("gpt")
        assert (gpt.num_layers, gpt.num_heads, gpt.d_model, gpt.batch_size, gpt.dropout) == (4, 8, 128, 512, 0.01)
        lstm = ModelConfig.for_family("lstm")
        assert (lstm.hidden, lstm.dropout, lstm.batch_size) == (512, 0.3, 64)
        tr = ModelConfig.for_family("transformer")
        assert (tr.num_layers, tr.num_heads, tr.d_model, tr.dropout, tr.batch_size) == (2, 12, 216, 0.1, 64)
        assert tr.context_mode == "action_sequence"
        assert ModelConfig.for_family("siamese").batch_size == 32
        assert set(PAPER_DEFAULTS) == set(FAMILIES) - set()

    @pytest.mark.parametrize("kwargs", [
        dict(family="mlp"),
        dict(family="transformer", context_mode="none"),
        dict(family="gpt", context_mode="questionnaire"),
        dict(family="gpt", use_positional_encoding=True),
        dict(family="gpt", d_model=30, num_heads=8),
        dict(family="bert", dtype="float16"),
        dict(family="lstm", dropout=1.0),
        dict(family="lstm", batch_size=0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            ModelConfig(**kwargs)

    def test_dict_round_trip_with_string_values(self):
        cfg = ModelConfig.for_family("ctx_bert", d_model=32, num_heads=4)
        raw = {k: str(v) for k, v in cfg.to_dict().items()}
        assert ModelConfig.from_dict(raw) == cfg


class TestUniformLoss:
    """Zeroed output heads give exactly ln V per predicted position."""

    @pytest.mark.parametrize("family", SEQUENCE_FAMILIES)
    def test_ln_v(self, family, family_examples, make_model):
        vocab, ex = family_examples(family, 4)
        model = make_model(family, vocab, **TINY)
        model.uniform_()
        model.eval()
        # MASK is never a target; BERT additionally never predicts STOP
        v = len(vocab) - (2 if family in ("bert", "ctx_bert") else 1)
        expected = (2 if family in ("lstm", "s2s_lstm") else 1) * math.log(v)
        got = float(model.loss(ex, np.random.default_rng(0)).data)
        assert got == pytest.approx(expected, abs=1e-12)


class TestGradients:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_family_loss(self, family, family_examples, make_model):
        vocab, ex = family_examples(family, 3)
        for seed in range(20):
            model = make_model(family, vocab, seed=seed, **TINY)
            jitter(model, np.random.default_rng(seed))
            fn = fixed_loss(model, ex, seed)
            if kink_margin(fn) >= 1e-3:
                break
        assert check_gradients(fn, model.parameters(), max_entries=4, rng=np.random.default_rng(seed)) < 1e-4


class TestLosses:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_finite_non_negative(self, family, family_examples, make_model):
        vocab, ex = family_examples(family, 6)
        model = make_model(family, vocab)
        for s in range(3):
            model.set_rng(np.random.default_rng(s + 10))
            v = float(model.loss(ex, np.random.default_rng(s)).data)
            assert np.isfinite(v) and v >= 0

    def test_lstm_needs_two_items(self, family_examples, make_model):
        vocab, ex = family_examples("lstm", 1)
        model = make_model("lstm", vocab)
        model.eval()
        short = Example(ex[0].rows[:1], ex[0].targets[:1])
        with pytest.raises(InputError):
            model.lstm_loss(short)
        assert float(model.lstm_loss(ex[0]).data) > 0

    def test_bert_context_cannot_be_masked(self, family_examples, make_model):
        vocab, ex = family_examples("ctx_bert", 1)
        model = make_model("ctx_bert", vocab)
        model.eval()
        with pytest.raises(UsageError):
            model.bert_loss(ex[0], len(ex[0].rows))
        with pytest.raises(UsageError):
            model.bert_loss(ex[0], -1)
        assert float(model.bert_loss(ex[0], 0).data) > 0

    def test_transformer_empty_actions(self, family_examples, make_model):
        vocab, ex = family_examples("transformer", 1)
        model = make_model("transformer", vocab)
        bare = Example(ex[0].rows, ex[0].targets, None, ex[0].anchor)
        with pytest.raises(InputError):
            model.transformer_loss(bare)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_state_round_trip_bit_exact(self, family, family_examples, make_model):
        vocab, ex = family_examples(family, 4)
        a = make_model(family, vocab, seed=1)
        b = make_model(family, vocab, seed=2)
        a.eval(), b.eval()
        b.load_state_dict(a.state_dict())
        la = a.loss(ex, np.random.default_rng(5)).data
        lb = b.loss(ex, np.random.default_rng(5)).data
        assert la.tobytes() == lb.tobytes()


class TestGPT:
    def test_context_token_is_never_a_target(self, family_examples, make_model):
        vocab, ex = family_examples("ctx_gpt", 2)
        model = make_model("ctx_gpt", vocab)
        model.eval()
        nll = model.sequence_nll([e.rows for e in ex], [e.targets for e in ex], [e.context for e in ex])
        assert [len(x) for x in nll] == [len(e.rows) + 1 for e in ex]

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_prefix_permutation_invariance_single_layer(self, seed, family_examples, make_model):
        # The prediction after x_k is read at x_k's own position, so x_k stays
        # put and x_1 .. x_{k-1} are shuffled.  One causal layer then sees a
        # set; stacking layers lets earlier (order-dependent) states leak in.
        vocab, ex = family_examples("gpt", 6)
        model = make_model("gpt", vocab, seed=seed % 100, num_layers=1)
        model.eval()
        rng = np.random.default_rng(seed)
        e = ex[int(rng.integers(len(ex)))]
        k = int(rng.integers(1, len(e.rows) + 1))
        perm = np.r_[rng.permutation(k - 1), np.arange(k - 1, len(e.rows))]
        a = model.sequence_nll([e.rows], [e.targets])[0]
        b = model.sequence_nll([e.rows[perm]], [e.targets[perm]])[0]
        np.testing.assert_array_equal(a[k:], b[k:])
        np.testing.assert_array_equal(model.next_log_probs([e.rows[:k]]),
                                      model.next_log_probs([e.rows[perm][:k]]))

    def test_two_layers_see_prefix_order(self, family_examples, make_model):
        vocab, ex = family_examples("gpt", 6)
        model = make_model("gpt", vocab, num_layers=2)
        model.eval()
        e = next(x for x in ex if len(x.rows) >= 4)
        k = len(e.rows)
        swapped = np.r_[1, 0, np.arange(2, k)]
        a = model.next_log_probs([e.rows])
        b = model.next_log_probs([e.rows[swapped]])
        assert np.abs(a - b).max() > 1e-9

    def test_loss_shuffles_training_order(self, family_examples, make_model):
        vocab, ex = family_examples("gpt", 4)
        model = make_model("gpt", vocab)
        model.eval()
        a = float(model.loss(ex, np.random.default_rng(0)).data)
        b = float(model.loss(ex, np.random.default_rng(1)).data)
        assert a != b


class TestBERT:
    @pytest.mark.parametrize("family", ["bert", "ctx_bert"])
    def test_unmasked_permutation_invariance(self, family, family_examples, make_model):
        vocab, ex = family_examples(family, 6)
        model = make_model(family, vocab)
        model.eval()
        rng = np.random.default_rng(0)
        for e in ex:
            perm = rng.permutation(len(e.rows) - 1)
            visible = e.rows[:-1]
            ctx = [e.context] if model.contextual else None
            np.testing.assert_array_equal(model.masked_log_probs([visible], ctx),
                                          model.masked_log_probs([visible[perm]], ctx))

    def test_never_predicts_specials(self, family_examples, make_model):
        vocab, ex = family_examples("bert", 2)
        model = make_model("bert", vocab)
        model.eval()
        p = np.exp(model.masked_log_probs([ex[0].rows]))
        assert p[0, STOP] == 0 and p[0, MASK] == 0
        assert p.sum() == pytest.approx(1.0)


class TestTransformer:
    def test_zeroed_cross_attention_equals_ablation(self, family_examples, make_model):
        vocab, ex = family_examples("transformer", 4)
        model = make_model("transformer", vocab)
        model.eval()
        for block in model.decoder.blocks:
            block.cross.out.weight.data[...] = 0.0
            block.cross.out.bias.data[...] = 0.0
        with_encoder = model.loss(ex, None, ablate=False).data
        decoder_only = model.loss(ex, None, ablate=True).data
        assert with_encoder.tobytes() == decoder_only.tobytes()

    def test_encoder_matters(self, family_examples, make_model):
        vocab, ex = family_examples("transformer", 4)
        model = make_model("transformer", vocab)
        model.eval()
        assert float(model.loss(ex, None, ablate=False).data) != float(model.loss(ex, None, ablate=True).data)

    def test_anchor_first(self, family_examples, make_model):
        vocab, ex = family_examples("transformer", 3)
        model = make_model("transformer", vocab)
        for e in ex:
            rows, targets = model.arrange(e, np.random.default_rng(0))
            assert rows[0] == e.rows[e.anchor]
            assert sorted(rows) == sorted(e.rows)


class TestSeq2Seq:
    def test_encoder_state_changes_loss(self, family_examples, make_model):
        vocab, ex = family_examples("s2s_lstm", 3)
        model = make_model("s2s_lstm", vocab)
        model.eval()
        a = float(model.s2s_lstm_loss(ex[0], use_encoder=True).data)
        b = float(model.s2s_lstm_loss(ex[0], use_encoder=False).data)
        assert a != b
        assert model.use_encoder


class TestSiamese:
    def test_interaction_vector(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(3, 64)))
        v = interaction_vector(x, x).data
        assert v.shape == (3, 256)
        np.testing.assert_array_equal(v[:, 128:192], 0.0)
        np.testing.assert_allclose(v[:, 192:], x.data ** 2)

    def test_zero_final_layer_scores_half(self, family_examples, make_model):
        vocab, ex = family_examples("siamese", 4)
        model = make_model("siamese", vocab)
        for mlp in (model.classifier, model.pair_head):
            mlp.layers[-1].weight.data[...] = 0.0
            mlp.layers[-1].bias.data[...] = 0.0
        np.testing.assert_array_equal(model.outfit_scores([e.rows for e in ex]), 0.5)
        np.testing.assert_array_equal(model.pair_scores(ex[0].rows[:2], ex[1].rows[:2]), 0.5)

    def test_scores_deterministic_and_bounded(self, family_examples, make_model):
        vocab, ex = family_examples("siamese", 4)
        model = make_model("siamese", vocab)
        a = model.pair_scores(ex[0].rows[:2], ex[1].rows[:2])
        np.testing.assert_array_equal(a, model.pair_scores(ex[0].rows[:2], ex[1].rows[:2]))
        assert np.all((a > 0) & (a < 1))

    def test_subnets_not_shared(self, family_examples, make_model):
        vocab, _ = family_examples("siamese", 1)
        model = make_model("siamese", vocab)
        ids = {id(p) for net in model.subnets for p in net.parameters()}
        assert len(model.subnets) == len(CATEGORIES)
        assert len(ids) == sum(len(net.parameters()) for net in model.subnets)
        w0, w1 = model.subnets[0].layers[0].weight.data, model.subnets[1].layers[0].weight.data
        assert not np.array_equal(w0, w1)

    def test_outfit_score_is_order_free(self, family_examples, make_model):
        vocab, ex = family_examples("siamese", 5)
        model = make_model("siamese", vocab)
        rng = np.random.default_rng(1)
        for e in ex:
            np.testing.assert_allclose(model.outfit_scores([e.rows]),
                                       model.outfit_scores([e.rows[rng.permutation(len(e.rows))]]),
                                       rtol=1e-13)

    @pytest.mark.parametrize("dtype, tol", [("float64", 1e-10), ("float32", 1e-5)])
    def test_fast_completion_matches_direct(self, dtype, tol, corpus, family_examples, make_model):
        vocab, ex = family_examples("siamese", 8)
        model = make_model("siamese", vocab, dtype=dtype)
        contexts = [e.rows[:-1] for e in ex] + [e.rows[:1] for e in ex] + [np.array([], dtype=np.int64)]
        cands = np.arange(0, len(corpus.catalog), 7)
        fast = model.completion_scores(contexts, cands)
        direct = model.completion_scores_direct(contexts, cands)
        np.testing.assert_allclose(fast, direct, rtol=tol, atol=tol)

    def test_completion_matches_outfit_logits(self, family_examples, make_model):
        vocab, ex = family_examples("siamese", 3)
        model = make_model("siamese", vocab)
        e = ex[0]
        got = model.candidate_scores(e.rows[:-1], e.rows[-1:])
        want = model.outfit_logits([e.rows]).data
        np.testing.assert_allclose(got, want, rtol=1e-10)
