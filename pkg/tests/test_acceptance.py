"""Acceptance criteria, one PASS/FAIL line each.

Criteria 6 and 7 train the full desk-scale benchmark (5k items, 20k outfits,
eleven model configurations, three seeds) once per session; expect the
module to take roughly half an hour on one core.
"""

import hashlib
import math
import time

import numpy as np
import pytest
from scipy.stats import binom

from outfitbench.catalog import NUM_SPECIAL, Outfit
from outfitbench.evaluation import (
    RankCutoffs, auc_mann_whitney, fitb, item_diversity, perplexity, personalization_rate,
)
from outfitbench.generation import beam_hypotheses, gibbs_tokens
from outfitbench.harness.benchmark import run_benchmark, suite_configs
from outfitbench.harness.checkpoint import CheckpointManager, load_checkpoint
from outfitbench.harness.compare import CLAIMS
from outfitbench.harness.config import ExperimentConfig
from outfitbench.harness.data import load_datasets, write_corpus
from outfitbench.harness.experiment import run_experiment
from outfitbench.models import FAMILIES, Example
from outfitbench.nn import (
    AttentionConfig, AttentionStack, Embedding, LayerNorm, Linear, LSTMCell, MLP, MultiHeadAttention,
    lstm_step, parameter,
)
from outfitbench.nn import functional as F
from outfitbench.nn.gradcheck import check_gradients, kink_margin
from outfitbench.synthgen import CorpusConfig, generate_corpus

from conftest import TINY, ToyBigram, ToyTwoSite, brute_force, fixed_loss, jitter


def verdict(capsys, label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
    with capsys.disabled():
        print(f"\n{line}")
    assert ok, line


# ---------------------------------------------------------------- 1. gradients
def _layer_instance(kind, seed):
    """A scalar loss over one layer at a random point, redrawn away from ReLU kinks."""
    for attempt in range(50):
        rng = np.random.default_rng(1000 * seed + attempt)
        x = parameter(rng.normal(size=(3, 5)))
        c = rng.normal(size=(3, 4))
        if kind == "linear":
            m = Linear(5, 4, rng)
            fn, params = (lambda: (m(x) * c).sum()), m.parameters() + [x]
        elif kind == "embedding":
            m = Embedding(6, 4, rng)
            idx = rng.integers(6, size=3)
            fn, params = (lambda: (m(idx) * c).sum()), m.parameters()
        elif kind == "layernorm":
            m = LayerNorm(5)
            m.gamma.data = rng.normal(size=5)
            m.beta.data = rng.normal(size=5)
            fn, params = (lambda: (m(x) ** 3).sum()), m.parameters() + [x]
        elif kind == "mlp":
            m = MLP([5, 6, 4], rng, final_relu=False)
            for p in m.parameters():
                p.data += rng.normal(0, 0.1, p.shape)
            fn, params = (lambda: (m(x) * c).sum()), m.parameters() + [x]
        elif kind == "lstm":
            m = LSTMCell(5, 4, rng)

            def fn():
                state = m.initial_state(3)
                for _ in range(3):
                    h, cc, _ = lstm_step(m, state, x)
                    state = (h, cc)
                return (h * c).sum() + (cc ** 2).sum()
            params = m.parameters() + [x]
        elif kind in ("self-attention", "causal-attention"):
            cfg = AttentionConfig(model_dim=8, num_heads=2, num_layers=2, dropout_rate=0.0,
                                  causal=kind == "causal-attention")
            m = AttentionStack(cfg, rng)
            for p in m.parameters():
                p.data += rng.normal(0, 0.05, p.shape)
            h = parameter(rng.normal(size=(2, 3, 8)))
            c8 = rng.normal(size=(2, 3, 8))
            fn, params = (lambda: (m(h) * c8).sum()), m.parameters() + [h]
        elif kind == "cross-attention":
            m = MultiHeadAttention(8, 2, rng, d_memory=6)
            h, mem = parameter(rng.normal(size=(2, 3, 8))), parameter(rng.normal(size=(2, 4, 6)))
            c8 = rng.normal(size=(2, 3, 8))
            fn, params = (lambda: (m(h, memory=mem) * c8).sum()), m.parameters() + [h, mem]
        elif kind == "cross-entropy":
            z = parameter(rng.normal(size=(5, 7)))
            t, w = rng.integers(7, size=5), rng.uniform(size=5)
            fn, params = (lambda: F.cross_entropy(z, t, w)), [z]
        elif kind == "bce":
            z = parameter(rng.normal(size=(5, 7)))
            y = rng.integers(2, size=(5, 7))
            fn, params = (lambda: F.bce_with_logits(z, y)), [z]
        else:
            raise ValueError(kind)
        if kink_margin(fn) >= 1e-3:
            return fn, params, rng
    raise AssertionError(f"no kink-free instance for {kind}")


LAYERS = ("linear", "embedding", "layernorm", "mlp", "lstm", "self-attention", "causal-attention",
          "cross-attention", "cross-entropy", "bce")


def test_criterion_1_gradients(capsys, family_examples, make_model):
    start = time.perf_counter()
    errors = {}
    for kind in LAYERS:
        for seed in range(2):
            fn, params, rng = _layer_instance(kind, seed)
            errors[f"{kind}#{seed}"] = check_gradients(fn, params, eps=1e-5, rng=rng)
    for family in FAMILIES:
        vocab, ex = family_examples(family, 3)
        for seed in range(20):
            model = make_model(family, vocab, seed=seed, **TINY)
            jitter(model, np.random.default_rng(seed))
            fn = fixed_loss(model, ex, seed)
            if kink_margin(fn) >= 1e-3:
                break
        errors[family] = check_gradients(fn, model.parameters(), eps=1e-5, max_entries=4,
                                         rng=np.random.default_rng(seed))
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = len(errors) >= 20 and errors[worst] < 1e-4 and elapsed < 60
    verdict(capsys, "1 (gradient correctness)", ok,
            f"{len(errors)} instances over {len(LAYERS)} layers and {len(FAMILIES)} model losses, "
            f"worst rel. error {errors[worst]:.2e} ({worst}), {elapsed:.1f} s")


# ---------------------------------------------------------------- 2. invariances
def _permutations(examples, rng, keep_last):
    for e in examples:
        n = len(e.rows) - (1 if keep_last else 0)
        for _ in range(3):
            perm = np.r_[rng.permutation(n), np.arange(n, len(e.rows))]
            yield e, perm


def test_criterion_2_bert_masked_slot(capsys, family_examples, make_model):
    worst = 0.0
    checked = 0
    for family in ("bert", "ctx_bert"):
        vocab, exs = family_examples(family, 30)
        model = make_model(family, vocab, num_layers=4)
        model.eval()
        rng = np.random.default_rng(0)
        for e, perm in _permutations(exs, rng, keep_last=False):
            ctx = None if e.context is None else [e.context]
            a = model.masked_log_probs([e.rows], ctx)
            b = model.masked_log_probs([e.rows[perm]], ctx)
            worst = max(worst, float(np.max(np.abs(np.exp(a) - np.exp(b)))))
            checked += 1
    verdict(capsys, "2a (BERT masked slot, default depth)", worst == 0.0,
            f"{checked} permutations, max |dp| = {worst:.1e}")


def _gpt_prefix_gap(family_examples, make_model, num_layers, keep_last):
    vocab, exs = family_examples("gpt", 30)
    model = make_model("gpt", vocab, num_layers=num_layers)
    model.eval()
    rng = np.random.default_rng(1)
    worst, checked = 0.0, 0
    for e, perm in _permutations([e for e in exs if len(e.rows) >= 3], rng, keep_last):
        a = model.next_log_probs([e.rows])
        b = model.next_log_probs([e.rows[perm]])
        worst = max(worst, float(np.max(np.abs(np.exp(a) - np.exp(b)))))
        checked += 1
    return worst, checked


def test_criterion_2_gpt_one_layer(capsys, family_examples, make_model):
    """Holds exactly when only the items before the query position move."""
    worst, n = _gpt_prefix_gap(family_examples, make_model, 1, keep_last=True)
    verdict(capsys, "2b (GPT prefix, one layer, query item fixed)", worst == 0.0,
            f"{n} permutations, max |dp| = {worst:.1e}")


def test_criterion_2_gpt_default_depth(capsys, family_examples, make_model):
    """Exact prefix invariance at the default four causal layers.

    With causal masking and no positions, layer-l states of earlier items see
    different prefixes after a permutation, so from the second layer on the
    prediction depends on order.  This check is expected to fail.
    """
    worst, n = _gpt_prefix_gap(family_examples, make_model, 4, keep_last=False)
    verdict(capsys, "2c (GPT prefix, default depth)", worst == 0.0,
            f"{n} permutations, max |dp| = {worst:.1e}")


# ---------------------------------------------------------------- 3. metric oracles
class RandomScorer:
    kind = "autoregressive"

    def __init__(self, num_items, seed):
        self.vocab = list(range(num_items + NUM_SPECIAL))
        self.rng = np.random.default_rng(seed)

    def next_log_probs(self, prefixes, contexts=None, direction="forward"):
        return self.rng.random((len(prefixes), len(self.vocab)))


class UniformLM:
    kind = "autoregressive"

    def __init__(self, v):
        self.v = v

    def sequence_nll(self, rows_list, targets_list, contexts=None):
        return [np.full(len(r) + 1, math.log(self.v)) for r in rows_list]


def test_criterion_3_metric_oracles(capsys, corpus, family_examples, make_model):
    checks = {}
    rng = np.random.default_rng(0)
    exs = [Example(np.arange(k), np.arange(k) + NUM_SPECIAL) for k in rng.integers(2, 8, size=50)]
    # exact up to the round-off of exp(log V)
    checks["uniform toy PP"] = abs(perplexity(UniformLM(173), exs).value / 173 - 1) < 1e-12
    vocab, real = family_examples("gpt", 40)
    model = make_model("gpt", vocab)
    model.uniform_()
    model.eval()
    checks["uniform GPT PP"] = abs(perplexity(model, real).value / (len(vocab) - 1) - 1) < 1e-12

    checks["4-score AUC"] = auc_mann_whitney([1.0, 3.0], [2.0, 0.0]) == 0.75

    v, trials = 300, 10_000
    cutoffs = RankCutoffs((1, 5, 25, 250))
    singles = [Example(np.array([k]), np.array([k + NUM_SPECIAL])) for k in rng.integers(v, size=trials)]
    res = fitb(RandomScorer(v, 1), singles, cutoffs, rng_seed=2)
    for r, rec in res.recall.items():
        lo, hi = binom.interval(0.99, trials, r / v)
        checks[f"FITB@{r} in 99% CI"] = lo / trials <= rec <= hi / trials

    ids = [it.item_id for it in corpus.catalog.items[:40]]
    recs = [Outfit(tuple(rng.choice(ids, size=int(rng.integers(2, 5)), replace=False))) for _ in range(1000)]
    keys = {hashlib.sha256("\x1f".join(sorted(o.items)).encode()).hexdigest() for o in recs}
    slots = [i for o in recs for i in o.items]
    checks["personalization recount"] = personalization_rate(recs) == len(keys) / 1000
    checks["diversity recount"] = item_diversity(recs) == len(set(slots)) / len(slots)
    failed = [k for k, ok in checks.items() if not ok]
    verdict(capsys, "3 (metric oracles)", not failed,
            f"{len(checks) - len(failed)}/{len(checks)} oracles hold" + (f"; failed: {failed}" if failed else ""))


# ---------------------------------------------------------------- 4. beam search
def test_criterion_4_beam_optimality(capsys):
    found, monotone = 0, 0
    seeds = range(20)
    for seed in seeds:
        toy = ToyBigram.random(4, np.random.default_rng(seed))
        best, lp = brute_force(toy, 2)
        top = beam_hypotheses(toy, width=16, fixed_length=2, exclude_duplicates=False)[0]
        found += top.rows == best and abs(top.log_prob - lp) < 1e-12
        pps = [beam_hypotheses(toy, width=w, fixed_length=2, exclude_duplicates=False)[0].perplexity
               for w in range(1, 17)]
        monotone += all(b <= a + 1e-12 for a, b in zip(pps, pps[1:]))
    ok = found == monotone == len(seeds)
    verdict(capsys, "4 (beam-search optimality)", ok,
            f"optimum found {found}/{len(seeds)}, monotone in width {monotone}/{len(seeds)} "
            "(4 items, length 2, 16 sequences)")


# ---------------------------------------------------------------- 5. Gibbs
def test_criterion_5_gibbs_stationary(capsys):
    k = 3
    toy = ToyTwoSite.random(k, np.random.default_rng(5))
    pi = toy.stationary()
    np.testing.assert_allclose(pi @ toy.kernel(), pi, atol=1e-12)
    states = gibbs_tokens(toy, 2, batch=100_000, num_iters=40, rng_seed=3, exclude_duplicates=False)
    idx = (states[:, 0] - NUM_SPECIAL) * k + (states[:, 1] - NUM_SPECIAL)
    emp = np.bincount(idx, minlength=k * k) / len(idx)
    tv = 0.5 * float(np.abs(emp - pi).sum())
    verdict(capsys, "5 (Gibbs stationary distribution)", tv < 0.02,
            f"TV = {tv:.4f} over {len(idx)} chains of 40 sweeps, {k * k} states")


# ---------------------------------------------------------------- 6, 7. desk benchmark
@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    write_corpus(generate_corpus(CorpusConfig()), root / "data")
    data = load_datasets(root / "data")
    reports, comparison = run_benchmark(suite_configs(root / "data", root / "runs"), data)
    return reports, comparison, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_6_learnability(capsys, benchmark):
    reports, _, elapsed = benchmark
    lines, ok = [], elapsed <= 1800
    for r in reports:
        if "cp_auc" not in r.metrics:
            continue
        need = {"gpt": 0.90, "bert": 0.90, "siamese": 0.75}.get(r.model_id, 0.0)
        floor = r.notes["lr_floor_auc"] - 0.05
        auc = r.metrics["cp_auc"]
        ok &= auc >= need and auc > floor
        lines.append(f"{r.model_id}/s{r.seed}={auc:.3f}")
    floors = sorted({round(r.notes["lr_floor_auc"], 3) for r in reports if "lr_floor_auc" in r.notes})
    verdict(capsys, "6 (learnability)", ok,
            f"CP-AUC {', '.join(lines)}; LR floor {floors}; total {elapsed / 60:.1f} min")


@pytest.mark.slow
@pytest.mark.parametrize("key", [c.key for c in CLAIMS])
def test_criterion_7_directional(capsys, benchmark, key):
    _, comparison, _ = benchmark
    claim = next(c for c in comparison.claims if c.key == key)
    verdict(capsys, f"7{key} (directional checklist)", claim.status == "PASS", claim.line())


# ---------------------------------------------------------------- 8. reproducibility
def test_criterion_8_reproducibility(capsys, corpus, tmp_path):
    write_corpus(corpus, tmp_path / "data")
    data = load_datasets(tmp_path / "data")

    def cfg(out):
        return ExperimentConfig(family="bert", data_dir=str(tmp_path / "data"), output_dir=str(tmp_path / out),
                                epochs=2, eval_limit=80, model=dict(d_model=16, num_heads=2, num_layers=2))

    _, a = run_experiment(cfg("a"), data)
    _, b = run_experiment(cfg("b"), data)
    c_cfg = cfg("c")
    run_experiment(c_cfg, data, stop_after=1)
    _, c = run_experiment(c_cfg, data)
    files = [(tmp_path / d / "bert-s0" / "report.jsonl").read_bytes() for d in "abc"]
    ca = load_checkpoint(CheckpointManager(tmp_path / "a" / "bert-s0" / "checkpoints").latest())
    cc = load_checkpoint(CheckpointManager(c_cfg.run_dir() / "checkpoints").latest())
    same_params = ca.tensors.keys() == cc.tensors.keys() and all(
        ca.tensors[k].tobytes() == cc.tensors[k].tobytes() for k in ca.tensors)
    ok = a.to_json() == b.to_json() == c.to_json() and files[0] == files[1] == files[2] and same_params
    verdict(capsys, "8 (reproducibility)", ok,
            f"reports byte-identical across repeat and resume: {files[0] == files[1] == files[2]}, "
            f"resumed parameters and optimizer state identical: {same_params}")
