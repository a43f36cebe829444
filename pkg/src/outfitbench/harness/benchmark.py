"""The default benchmark suite: every model configuration the checklist needs, over several seeds."""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Sequence

from ..errors import ConfigurationError
from ..evaluation import EvalReport
from .compare import Comparison, compare
from .config import ExperimentConfig
from .data import Datasets, load_datasets
from .experiment import run_experiment

log = logging.getLogger("outfitbench")

# (family, dataset or "" for the family default)
SUITE = (
    ("siamese", ""), ("lstm", ""), ("gpt", ""), ("bert", ""),
    ("ctx_gpt", ""), ("ctx_bert", ""), ("gpt", "questionnaire"), ("bert", "questionnaire"),
    ("transformer", ""), ("s2s_lstm", ""), ("siamese", "click"),
)

# Narrower than the paper's widths so that the 3-seed suite fits a single-core desk budget.
DESK_MODEL = {"d_model": 64, "num_heads": 4, "num_layers": 2, "hidden": 64, "siamese_width": 64}
DESK_EPOCHS = {"gpt": 6, "bert": 8, "ctx_gpt": 6, "ctx_bert": 8}
DESK_DEFAULT_EPOCHS = 3
DESK_EVAL_LIMIT = 2000
DESK_GENERATION_LIMIT = 500


def suite_configs(data_dir, output_dir, seeds: Sequence[int] = (0, 1, 2), profile: str = "desk",
                  epochs: int | None = None, threads: int = 1) -> list[ExperimentConfig]:
    """One config per (suite entry, seed); each seed drives the split, the init and the evaluation."""
    configs = []
    for seed in seeds:
        for family, dataset in SUITE:
            if profile == "desk":
                opts = dict(model=dict(DESK_MODEL), eval_limit=DESK_EVAL_LIMIT,
                            generation_limit=DESK_GENERATION_LIMIT,
                            epochs=DESK_EPOCHS.get(family, DESK_DEFAULT_EPOCHS))
            elif profile == "paper":
                opts = dict(epochs=10, generation_limit=DESK_GENERATION_LIMIT)
            else:
                raise ConfigurationError(f"unknown benchmark profile {profile!r}")
            if epochs is not None:
                opts["epochs"] = epochs
            configs.append(ExperimentConfig(family=family, dataset=dataset, data_dir=str(data_dir),
                                            output_dir=str(output_dir), data_seed=seed, init_seed=seed,
                                            eval_seed=seed, threads=threads, **opts))
    return configs


def run_benchmark(configs: Sequence[ExperimentConfig], data: Datasets | None = None,
                  output_dir=None) -> tuple[list[EvalReport], Comparison]:
    """Run every config, then write ``reports.jsonl`` and ``comparison.txt`` next to the runs."""
    if not configs:
        raise ConfigurationError("benchmark has no configurations")
    data = data or load_datasets(configs[0].data_dir)
    out = Path(output_dir or configs[0].output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    start = time.perf_counter()
    for cfg in configs:
        _, report = run_experiment(cfg, data)
        log.info("%s done (%.0f s elapsed)", cfg.run_name, time.perf_counter() - start)
        reports.append(report)
    comparison = compare(reports)
    (out / "reports.jsonl").write_text("".join(r.to_json() + "\n" for r in reports))
    (out / "comparison.txt").write_text(comparison.render() + "\n")
    return reports, comparison
