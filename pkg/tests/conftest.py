import itertools
import warnings

import numpy as np
import pytest

from outfitbench.catalog import NUM_SPECIAL, build_vocabulary
from outfitbench.models import ModelConfig, build_model, examples_from_outfits, examples_from_users
from outfitbench.synthgen import CorpusConfig, generate_corpus

warnings.filterwarnings("ignore", message=".*skipped.*")

TINY = dict(d_model=8, num_heads=2, num_layers=2, hidden=6, siamese_width=4, dropout=0.0,
            dtype="float64", head_init=0.5)
SMALL = dict(d_model=16, num_heads=2, num_layers=2, hidden=16, siamese_width=16, dtype="float64")


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(CorpusConfig(num_items=400, num_outfits=1200, num_questionnaire_users=80,
                                        num_click_samples=120))


@pytest.fixture(scope="session")
def vocabs(corpus):
    return {
        "curated": build_vocabulary(corpus.outfits, 2),
        "questionnaire": build_vocabulary([o for u in corpus.questionnaire_users for o in u.outfits], 1),
        "click": build_vocabulary([o for u in corpus.click_users for o in u.outfits], 1),
    }


DATASET_OF = {"siamese": "curated", "lstm": "curated", "gpt": "curated", "bert": "curated",
              "ctx_gpt": "questionnaire", "ctx_bert": "questionnaire",
              "transformer": "click", "s2s_lstm": "click"}


@pytest.fixture(scope="session")
def family_examples(corpus, vocabs):
    def get(family, n=4):
        ds = DATASET_OF[family]
        v = vocabs[ds]
        if ds == "curated":
            ex = examples_from_outfits(corpus.outfits, corpus.catalog, v)
        else:
            users = corpus.questionnaire_users if ds == "questionnaire" else corpus.click_users
            ex = examples_from_users(users, corpus.catalog, v)
        ex = [e for e in ex if (e.targets >= 0).all()]
        return v, ex[:n]
    return get


@pytest.fixture(scope="session")
def make_model(corpus):
    def make(family, vocab, seed=0, **overrides):
        opts = dict(SMALL)
        opts.update(overrides)
        return build_model(ModelConfig.for_family(family, **opts), vocab, corpus.catalog, seed)
    return make


def fixed_loss(model, batch, seed=0):
    def fn():
        model.set_rng(np.random.default_rng(seed + 1))
        return model.loss(batch, np.random.default_rng(seed))
    return fn


def jitter(model, rng, scale=0.05):
    """Move to a generic point: zero-initialised biases put ReLU inputs exactly on the kink."""
    for p in model.parameters():
        p.data += rng.normal(0, scale, p.shape).astype(p.data.dtype)


# ---------------------------------------------------------------- toy token-level models
class ToyBigram:
    """Left-to-right toy: first-token table plus bigram table over all tokens.

    Item token ``t`` stands for row ``t - NUM_SPECIAL``.
    """

    kind = "autoregressive"

    def __init__(self, first: np.ndarray, nxt: np.ndarray):
        self.first = np.asarray(first, dtype=np.float64)
        self.nxt = np.asarray(nxt, dtype=np.float64)
        self.num_tokens = len(self.first)
        self.token_rows = np.r_[np.full(NUM_SPECIAL, -1), np.arange(self.num_tokens - NUM_SPECIAL)]
        self.calls = 0

    @classmethod
    def random(cls, num_items: int, rng, stop_mass: float = 0.2):
        t = num_items + NUM_SPECIAL

        def table(shape):
            logits = rng.normal(size=shape)
            p = np.exp(logits)
            p[..., 1] = 0.0  # mask token
            p[..., NUM_SPECIAL:] /= p[..., NUM_SPECIAL:].sum(axis=-1, keepdims=True)
            p[..., NUM_SPECIAL:] *= 1 - stop_mass
            p[..., 0] = stop_mass
            with np.errstate(divide="ignore"):
                return np.log(p)
        return cls(table(t), table((t, t)))

    def next_log_probs(self, prefixes, contexts=None, direction="forward"):
        self.calls += 1
        out = []
        for p in prefixes:
            out.append(self.first if len(p) == 0 else self.nxt[int(p[-1]) + NUM_SPECIAL])
        return np.array(out)


class ToyTwoSite:
    """Masked toy over two positions: ``cond[pos][other_token]`` is a log-prob row."""

    kind = "masked"

    def __init__(self, cond0: np.ndarray, cond1: np.ndarray):
        self.cond = (np.asarray(cond0, dtype=np.float64), np.asarray(cond1, dtype=np.float64))
        self.num_tokens = self.cond[0].shape[1]
        self.token_rows = np.r_[np.full(NUM_SPECIAL, -1), np.arange(self.num_tokens - NUM_SPECIAL)]

    @classmethod
    def random(cls, num_items: int, rng):
        t = num_items + NUM_SPECIAL

        def table():
            logits = rng.normal(scale=1.5, size=(t, t))
            logits[:, :NUM_SPECIAL] = -np.inf
            return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return cls(table(), table())

    def slot_log_probs(self, states_rows, positions, contexts=None):
        states_rows = np.asarray(states_rows)
        positions = np.asarray(positions)
        other = states_rows[np.arange(len(states_rows)), 1 - positions] + NUM_SPECIAL
        return np.where((positions == 0)[:, None], self.cond[0][other], self.cond[1][other])

    def kernel(self) -> np.ndarray:
        """Exact random-scan transition matrix over item pairs ``(a, b) -> index a * K + b``."""
        k = self.num_tokens - NUM_SPECIAL
        p0 = np.exp(self.cond[0][NUM_SPECIAL:, NUM_SPECIAL:])  # [other=b, new a]
        p1 = np.exp(self.cond[1][NUM_SPECIAL:, NUM_SPECIAL:])  # [other=a, new b]
        t = np.zeros((k * k, k * k))
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    t[a * k + b, c * k + b] += 0.5 * p0[b, c]
                    t[a * k + b, a * k + c] += 0.5 * p1[a, c]
        return t

    def stationary(self) -> np.ndarray:
        t = self.kernel()
        vals, vecs = np.linalg.eig(t.T)
        v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
        return v / v.sum()


def brute_force(toy, length):
    """Best fixed-length sequence over item rows by summed log-probability."""
    k = toy.num_tokens - NUM_SPECIAL
    best = None
    for seq in itertools.product(range(k), repeat=length):
        lp = toy.first[seq[0] + NUM_SPECIAL]
        for a, b in zip(seq, seq[1:]):
            lp += toy.nxt[a + NUM_SPECIAL, b + NUM_SPECIAL]
        if best is None or lp > best[1]:
            best = (seq, lp)
    return best


@pytest.fixture
def toy_bigram():
    return ToyBigram.random


@pytest.fixture
def toy_two_site():
    return ToyTwoSite.random
