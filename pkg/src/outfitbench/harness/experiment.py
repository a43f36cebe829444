"""One experiment end to end: split, vocabulary, training with checkpoints, evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..catalog import Outfit, build_vocabulary
from ..errors import DataError, TrainingError
from ..evaluation import (
    EvalReport,
    RankCutoffs,
    attribute_match_rate,
    compatibility_auc,
    cp_negatives,
    fitb,
    format_table,
    item_diversity,
    logistic_floor_auc,
    perplexity,
    personalization_rate,
)
from ..generation import (
    build_candidate_index,
    generate_batch,
    gibbs_generate_batch,
    personalized_siamese_recommend,
)
from ..models import build_model, examples_from_outfits, examples_from_users, questionnaire_tokens
from ..nn.optim import ParamStore
from ..rng import stream
from ..synthgen import Oracle
from .checkpoint import CheckpointManager, TrainerLock, load_checkpoint
from .config import ExperimentConfig, dump_config
from .data import Datasets, load_datasets
from .splits import split

log = logging.getLogger("outfitbench")

SCHEMA_KEYS = {"brand-category": "brand_category", "color-category": "color_category",
               "brand-color-category": "brand_color_category"}


@dataclass
class Prepared:
    vocab: object
    train_samples: list
    val_samples: list
    train_examples: list
    val_examples: list


@dataclass
class RunManifest:
    config: list
    dataset_id: str
    dataset_files: dict
    checkpoints: list
    report_path: str
    runtime_seconds: float
    config_hash: str = ""
    resumed_from: str | None = None
    losses: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def config_hash(config: ExperimentConfig) -> str:
    """Hash of everything that determines the trained parameters."""
    skip = ("output_dir", "threads", "eval_limit", "generation_limit", "run_name", "eval_seed")
    lines = [ln for ln in config.to_lines() if ln.split(" = ", 1)[0] not in skip]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


# ------------------------------------------------------------------ data
def prepare(config: ExperimentConfig, data: Datasets) -> Prepared:
    samples = data.samples(config.dataset)
    train, val = split(samples, config.split, config.data_seed, config.val_fraction)
    catalog = data.catalog
    if config.dataset == "curated":
        vocab = build_vocabulary(train, config.vocab_threshold)
        train_ex = examples_from_outfits(train, catalog, vocab)
        val_ex = examples_from_outfits(val, catalog, vocab)
    else:
        vocab = build_vocabulary([o for u in train for o in u.outfits], config.vocab_threshold)
        use_ctx = config.model_config().context_mode != "none"
        train_ex = examples_from_users(train, catalog, vocab, use_ctx)
        val_ex = examples_from_users(val, catalog, vocab, use_ctx)
    train_ex = [ex for ex in train_ex if (ex.targets >= 0).any()]
    return Prepared(vocab, train, val, train_ex, val_ex)


# ------------------------------------------------------------------ training
def train_epochs(model, examples, config: ExperimentConfig, store: ParamStore, start_epoch: int = 0,
                 manager: CheckpointManager | None = None, meta: dict | None = None,
                 losses: list | None = None) -> list[float]:
    """Run epochs ``start_epoch .. config.epochs - 1``; returns the per-epoch mean losses.

    Batch order, loss-internal sampling and dropout masks come from streams
    keyed on (seed, epoch, batch), so a resumed run replays exactly.
    """
    losses = list(losses or [])
    batch_size = model.config.batch_size
    for epoch in range(start_epoch, config.epochs):
        model.train()
        total, count = 0.0, 0
        order_rng = stream(config.data_seed, "batch", epoch)
        for b, batch in enumerate(model.batches(examples, order_rng, batch_size)):
            model.set_rng(stream(config.init_seed, "dropout", epoch, b))
            loss = model.loss(batch, stream(config.data_seed, "loss", epoch, b))
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(
                    f"{config.run_name}: loss became {value} at epoch {epoch}, batch {b} "
                    f"(batch size {len(batch)}, optimizer step {store.step_count}, lr {store.lr})")
            loss.backward()
            store.step()
            total += value * len(batch)
            count += len(batch)
        model.set_rng(None)
        losses.append(total / max(count, 1))
        log.info("%s epoch %d loss %.4f", config.run_name, epoch + 1, losses[-1])
        if manager is not None:
            m = dict(meta or {}, loss_history=",".join(f"{v:.17g}" for v in losses))
            tensors = dict(model.state_dict())
            tensors.update(store.state())
            manager.save(epoch + 1, m, model.vocab.item_ids, tensors)
    return losses


def restore(model, store: ParamStore, path) -> tuple[int, list]:
    ckpt = load_checkpoint(path)
    if tuple(ckpt.vocab_ids) != tuple(model.vocab.item_ids):
        raise DataError(f"checkpoint {path} was trained with a different vocabulary")
    model.load_state_dict(ckpt.params())
    store.load_state(ckpt.optimizer())
    hist = ckpt.meta.get("loss_history", "")
    return ckpt.epoch, [float(x) for x in hist.split(",") if x]


def load_trained(config: ExperimentConfig, data: Datasets):
    """Rebuild the model of a finished run from its newest checkpoint; returns (model, prepared data)."""
    manager = CheckpointManager(config.run_dir() / "checkpoints")
    latest = manager.latest()
    if latest is None:
        raise DataError(f"no checkpoint under {manager.dir}; train the run first")
    prep = prepare(config, data)
    mcfg = config.model_config()
    model = build_model(mcfg, prep.vocab, data.catalog, config.init_seed)
    store = ParamStore(model.named_parameters(), lr=mcfg.lr, clip_norm=mcfg.clip_norm)
    restore(model, store, latest)
    model.eval()
    return model, prep


# ------------------------------------------------------------------ evaluation
def _cutoffs(vocab) -> RankCutoffs:
    return RankCutoffs(tuple(r for r in (1, 5, 25, 250) if r <= vocab.num_items))


def _limit(items, n):
    return list(items) if not n else list(items)[:n]


def _attribute_metrics(recs, refs, catalog, metrics, notes, prefix):
    covered = [(o, r) for o, r in zip(recs, refs) if o is not None]
    total_events = sum(len(r) for r in refs)
    for schema, key in SCHEMA_KEYS.items():
        hits = 0.0
        if covered:
            events = sum(len(r) for _, r in covered)
            if events:
                hits = attribute_match_rate([o for o, _ in covered], [r for _, r in covered], schema, catalog) * events
        metrics[key] = hits / total_events if total_events else float("nan")
    served = [o for o in recs if o is not None]
    metrics["personalization"] = personalization_rate(served) if served else float("nan")
    metrics["diversity"] = item_diversity(served) if served else float("nan")
    notes[f"{prefix}_users"] = len(recs)
    notes[f"{prefix}_uncovered"] = len(recs) - len(served)


def oracle_rates(model, data: Datasets, n: int, seed: int) -> dict:
    """Oracle-compatibility of sampled outfits against random sets of the same lengths."""
    if data.world is None:
        return {}
    oracle = Oracle(data.world, data.catalog)
    outs = generate_batch(model, [[] for _ in range(n)], None, temperature=1.0, rng_seed=seed)
    rng = stream(seed, "random-sets")
    items = np.array(model.vocab.item_ids)
    rand = [Outfit(tuple(rng.choice(items, size=len(o), replace=False))) for o in outs]
    by_cat = {}
    for iid in model.vocab.item_ids:
        by_cat.setdefault(data.catalog.category_of(iid), []).append(iid)
    matched = []
    for o in outs:
        pick = []
        for iid in o.items:
            pool = [c for c in by_cat[data.catalog.category_of(iid)] if c not in pick]
            pick.append(pool[int(rng.integers(len(pool)))])
        matched.append(Outfit(tuple(pick)))
    return {
        "oracle_rate": float(np.mean([oracle(o) for o in outs])),
        "random_base_rate": float(np.mean([oracle(o) for o in rand])),
        "layout_base_rate": float(np.mean([oracle(o) for o in matched])),
        "generated_mean_length": float(np.mean([len(o) for o in outs])),
    }


def evaluate(model, config: ExperimentConfig, data: Datasets, prep: Prepared) -> EvalReport:
    family, dataset = config.family, config.dataset
    catalog = data.catalog
    seed = config.eval_seed
    val_ex = _limit(prep.val_examples, config.eval_limit)
    metrics: dict = {}
    notes: dict = {"family": family, "dataset": dataset, "epochs": config.epochs,
                   "vocab_items": prep.vocab.num_items, "val_examples": len(val_ex)}
    if model.kind != "discriminative":
        pp = perplexity(model, val_ex)
        metrics["pp"] = pp.value
        notes["pp_skipped"] = pp.skipped
    if dataset in ("curated", "questionnaire") and not (dataset == "questionnaire" and family == "siamese"):
        f = fitb(model, val_ex, _cutoffs(prep.vocab), seed)
        for r, v in f.recall.items():
            metrics[f"fitb@{r}"] = v
        notes["fitb_skipped"] = f.skipped
    if dataset == "curated":
        auc = compatibility_auc(model, val_ex, seed)
        metrics["cp_auc"] = auc.auc
        notes["cp_skipped"] = auc.skipped
        train_ex = [ex for ex in prep.train_examples if (ex.targets >= 0).all()]
        test_pos = [ex for ex in val_ex if (ex.targets >= 0).all()]
        notes["lr_floor_auc"] = logistic_floor_auc(
            [Outfit(ex.item_ids) for ex in train_ex],
            [Outfit(ex.item_ids) for ex in cp_negatives(train_ex, prep.vocab, catalog, config.data_seed)],
            [Outfit(ex.item_ids) for ex in test_pos],
            [Outfit(ex.item_ids) for ex in cp_negatives(test_pos, prep.vocab, catalog, seed)],
            catalog, config.data_seed)
        if family == "gpt" and config.generation_limit:
            notes.update(oracle_rates(model, data, config.generation_limit, seed))
    users = _limit(prep.val_samples, config.generation_limit) if dataset != "curated" else []
    if dataset == "questionnaire" and family != "siamese" and users:
        lengths = [len(u.outfits[0]) for u in users]
        contexts = None
        if model.config.context_mode != "none":
            contexts = [questionnaire_tokens(u.context) for u in users]
        if model.kind == "masked":
            recs = gibbs_generate_batch(model, lengths, contexts, None, seed)
            notes["gibbs_iters_per_item"] = 10
        else:
            recs = generate_batch(model, [[] for _ in users], contexts, temperature=0.0, rng_seed=seed,
                                  fixed_lengths=lengths)
        refs = [sorted({i for o in u.outfits for i in o.items}) for u in users]
        _attribute_metrics(recs, refs, catalog, metrics, notes, "kr")
        notes["reference"] = "kept items"
    if dataset == "click" and users:
        refs = [[i for i in u.outfits[0].items if i != u.anchor] for u in users]
        if family == "siamese":
            train_layouts = sorted({tuple(sorted(catalog.category_of(i) for i in u.outfits[0].items))
                                    for u in prep.train_samples})
            anchors = sorted({u.anchor for u in users})
            index = build_candidate_index(model, anchors, train_layouts, cap=config.candidate_cap,
                                          rng_seed=seed, pool=100)
            recs = []
            for u in users:
                if u.anchor in index and index[u.anchor]:
                    recs.append(personalized_siamese_recommend(u.context, u.anchor, index, catalog))
                else:
                    recs.append(None)
        else:
            ex = examples_from_users(users, catalog, prep.vocab)
            recs = generate_batch(model, [[u.anchor] for u in users], [e.context for e in ex],
                                  temperature=0.0, rng_seed=seed)
        _attribute_metrics(recs, refs, catalog, metrics, notes, "ctr")
        notes["reference"] = "clicked items"
    return EvalReport(config.model_id, data.dataset_id, config.init_seed, metrics, notes).validate()


# ------------------------------------------------------------------ orchestration
def _threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def run_experiment(config: ExperimentConfig, data: Datasets | None = None,
                   stop_after: int | None = None) -> tuple[RunManifest, EvalReport]:
    """Train (resuming from the newest checkpoint when possible), evaluate, write outputs.

    ``stop_after`` ends training after that many total epochs without
    evaluating, which simulates an interrupted run.
    """
    start = time.perf_counter()
    data = data or load_datasets(config.data_dir)
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(config)
    with TrainerLock(run_dir), _threads(config.threads):
        dump_config(config, run_dir / "config.cfg")
        prep = prepare(config, data)
        mcfg = config.model_config()
        model = build_model(mcfg, prep.vocab, data.catalog, config.init_seed)
        store = ParamStore(model.named_parameters(), lr=mcfg.lr, clip_norm=mcfg.clip_norm)
        manager = CheckpointManager(run_dir / "checkpoints")
        meta = {"config_hash": chash, "family": config.family, "vocab_threshold": config.vocab_threshold,
                "dtype": mcfg.dtype}
        meta.update({f"config.{k}": v for k, v in (ln.split(" = ", 1) for ln in config.to_lines())})
        start_epoch, losses, resumed = 0, [], None
        latest = manager.latest()
        if latest is not None:
            ckpt = load_checkpoint(latest)
            if ckpt.meta.get("config_hash") == chash and ckpt.epoch <= config.epochs:
                start_epoch, losses = restore(model, store, latest)
                resumed = str(latest)
                log.info("%s resuming after epoch %d", config.run_name, start_epoch)
        if stop_after is not None:
            partial = replace(config, epochs=min(stop_after, config.epochs))
            train_epochs(model, prep.train_examples, partial, store, start_epoch, manager, meta, losses)
            return None, None
        losses = train_epochs(model, prep.train_examples, config, store, start_epoch, manager, meta, losses)
        report = evaluate(model, config, data, prep)
        report.notes["final_train_loss"] = losses[-1] if losses else None
        report.runtime_seconds = time.perf_counter() - start
        report_path = run_dir / "report.jsonl"
        report_path.write_text(report.to_json() + "\n")
        (run_dir / "report.txt").write_text(format_table([report]) + "\n")
        manifest = RunManifest(config.to_lines(), data.dataset_id, data.files, [str(p) for p in manager.all()],
                               str(report_path), report.runtime_seconds, chash, resumed, losses)
        (run_dir / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest, report
