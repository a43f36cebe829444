"""Command-line interface: ``outfitbench <command> ...``.

Exit codes: 0 success, 1 usage or configuration problem, 2 data problem,
3 runtime failure (training divergence, generation, comparison).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from .catalog import SCHEMA_VERSION, outfit_record
from .errors import ConfigurationError, DataError, MetricError, OutfitBenchError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("outfitbench")


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad arguments; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args):
    from .harness.config import load_config
    return load_config(args.config, _overrides(args.set))


# ------------------------------------------------------------------ commands
def cmd_gen_data(args) -> int:
    from .harness.data import write_corpus
    from .synthgen import CorpusConfig, generate_corpus
    cfg = CorpusConfig(num_items=args.items, num_outfits=args.outfits,
                       num_questionnaire_users=args.questionnaire_users,
                       num_click_samples=args.click_samples, noise=args.noise, seed=args.seed)
    paths = write_corpus(generate_corpus(cfg), args.out)
    for kind, path in paths.items():
        print(f"{kind:14s} {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .harness.experiment import run_experiment
    config = _config(args)
    run_experiment(config, stop_after=config.epochs)
    ckpts = sorted((config.run_dir() / "checkpoints").glob("epoch-*.ckpt"))
    print(f"trained {config.run_name}: {ckpts[-1] if ckpts else 'no checkpoint (epochs = 0)'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import format_table
    from .harness.experiment import run_experiment
    config = _config(args)
    manifest, report = run_experiment(config)
    if args.json:
        print(report.to_json())
    else:
        print(format_table([report]))
        print(f"report: {manifest.report_path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .catalog import write_jsonl
    from .generation import beam_search, generate_batch, gibbs_generate_batch
    from .harness.data import load_datasets
    from .harness.experiment import load_trained
    from .models import examples_from_users, questionnaire_tokens
    from .synthgen import Oracle

    config = _config(args)
    data = load_datasets(config.data_dir)
    model, prep = load_trained(config, data)
    seeds = [[s for s in args.seed_items.split(",") if s]] * args.count if args.seed_items else [[]] * args.count
    contexts = None
    if model.config.context_mode != "none":
        users = prep.val_samples[: args.count]
        if len(users) < args.count:
            raise UsageError(f"only {len(users)} validation users available for contextual generation")
        if model.config.context_mode == "questionnaire":
            contexts = [questionnaire_tokens(u.context) for u in users]
        else:
            contexts = [e.context for e in examples_from_users(users, data.catalog, prep.vocab)][: args.count]
            if not args.seed_items:
                seeds = [[u.anchor] for u in users]
    method = args.method or ("gibbs" if model.kind == "masked" else "sample")
    if method == "gibbs":
        if args.length is None:
            raise UsageError("gibbs generation needs --length")
        outfits = gibbs_generate_batch(model, [args.length] * args.count, contexts, None, args.rng_seed)
    elif method == "beam":
        outfits = []
        for i, s in enumerate(seeds):
            ctx = None if contexts is None else contexts[i]
            outfits.append(beam_search(model, s, width=args.beam_width, max_len=args.max_len, context=ctx)[0])
    else:
        temp = 0.0 if method == "greedy" else args.temperature
        fixed = None if args.length is None else [args.length] * args.count
        outfits = generate_batch(model, seeds, contexts, max_len=args.max_len, temperature=temp,
                                 rng_seed=args.rng_seed, fixed_lengths=fixed)
    if args.out:
        write_jsonl(args.out, "outfits", (outfit_record(o) for o in outfits))
    else:
        print(json.dumps({"schema": "outfitbench/outfits", "version": SCHEMA_VERSION}, sort_keys=True))
        for o in outfits:
            print(json.dumps(outfit_record(o), sort_keys=True, separators=(",", ":")))
    oracle = Oracle(data.world, data.catalog) if data.world is not None else None
    table = sys.stderr if not args.out else sys.stdout
    print(f"{'#':>3}  {'n':>2}  {'oracle':6}  categories", file=table)
    for i, o in enumerate(outfits):
        ok = "-" if oracle is None else ("yes" if oracle(o) else "no")
        cats = " ".join(data.catalog.category_of(x) for x in o.items)
        print(f"{i:>3}  {len(o):>2}  {ok:6}  {cats}", file=table)
    return EXIT_OK


def _read_reports(paths):
    from .evaluation import EvalReport
    reports = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            p = p / "report.jsonl"
        if not p.exists():
            raise DataError(f"report file {p} not found")
        for line in p.read_text().splitlines():
            if line.strip():
                try:
                    reports.append(EvalReport.from_json(line))
                except (ValueError, KeyError, TypeError, MetricError) as exc:
                    raise DataError(f"{p}: not an evaluation report ({exc})") from None
    return reports


def cmd_compare(args) -> int:
    from .harness.compare import compare
    comparison = compare(_read_reports(args.reports))
    print(comparison.render())
    return EXIT_OK


def cmd_report(args) -> int:
    from .evaluation import format_table
    reports = _read_reports(args.reports)
    if args.json:
        for r in reports:
            print(r.to_json())
    else:
        print(format_table(reports))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .harness.benchmark import run_benchmark, suite_configs
    out = os.environ.get("OUTFITBENCH_OUTPUT_DIR") or args.out
    threads = int(os.environ.get("OUTFITBENCH_THREADS") or args.threads)
    seeds = [int(s) for s in args.seeds.split(",")]
    configs = suite_configs(args.data, out, seeds, args.profile, args.epochs, threads)
    _, comparison = run_benchmark(configs, output_dir=out)
    print(comparison.render())
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="outfitbench", description="Train, evaluate and compare outfit models on synthetic data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress (epochs, runs) to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic corpus (catalog, outfits, users)")
    g.add_argument("--out", required=True, help="output directory for the JSONL files")
    g.add_argument("--items", type=int, default=5000, help="catalog size (default 5000)")
    g.add_argument("--outfits", type=int, default=20000, help="curated outfits (default 20000)")
    g.add_argument("--questionnaire-users", type=int, default=5000, help="questionnaire users (default 5000)")
    g.add_argument("--click-samples", type=int, default=10000, help="click samples (default 10000)")
    g.add_argument("--noise", type=float, default=0.1, help="share of off-rule user behaviour (default 0.1)")
    g.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    g.set_defaults(func=cmd_gen_data)

    def config_args(q):
        q.add_argument("config", help="experiment config file (key = value lines)")
        q.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. --set epochs=2 or --set model.d_model=64; repeatable")

    t = sub.add_parser("train", help="train a model, checkpointing every epoch (resumes automatically)")
    config_args(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="train if needed, then evaluate and write the report")
    config_args(e)
    e.add_argument("--json", action="store_true", help="print the JSON report line instead of the table")
    e.set_defaults(func=cmd_eval)

    gen = sub.add_parser("generate", help="generate outfits with a trained run")
    config_args(gen)
    gen.add_argument("--count", type=int, default=10, help="number of outfits (default 10)")
    gen.add_argument("--method", choices=("sample", "greedy", "beam", "gibbs"),
                     help="decoding method (default: gibbs for masked models, sample otherwise)")
    gen.add_argument("--seed-items", default="", help="comma-separated item ids every outfit must start from")
    gen.add_argument("--temperature", type=float, default=1.0, help="sampling temperature (default 1.0)")
    gen.add_argument("--beam-width", type=int, default=5, help="beam width for --method beam (default 5)")
    gen.add_argument("--max-len", type=int, default=7, help="maximum outfit length (default 7)")
    gen.add_argument("--length", type=int, default=None,
                     help="exact outfit length (required for gibbs; optional otherwise)")
    gen.add_argument("--rng-seed", type=int, default=0, help="generation seed (default 0)")
    gen.add_argument("--out", help="write the outfits JSONL here instead of stdout")
    gen.set_defaults(func=cmd_generate)

    c = sub.add_parser("compare", help="rank reports and run the directional checklist")
    c.add_argument("reports", nargs="+", help="report.jsonl files or run directories")
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("report", help="print reports as an aligned table")
    r.add_argument("reports", nargs="+", help="report.jsonl files or run directories")
    r.add_argument("--json", action="store_true", help="print canonical JSON lines instead")
    r.set_defaults(func=cmd_report)

    b = sub.add_parser("benchmark", help="run the default suite of model configurations over several seeds")
    b.add_argument("--data", required=True, help="corpus directory written by gen-data")
    b.add_argument("--out", default="runs", help="output directory (env OUTFITBENCH_OUTPUT_DIR wins)")
    b.add_argument("--seeds", default="0,1,2", help="comma-separated seeds (default 0,1,2)")
    b.add_argument("--profile", choices=("desk", "paper"), default="desk",
                   help="desk: narrow models, few epochs; paper: published widths, 10 epochs")
    b.add_argument("--epochs", type=int, default=None, help="override every run's epoch count")
    b.add_argument("--threads", type=int, default=1, help="BLAS threads (env OUTFITBENCH_THREADS wins)")
    b.set_defaults(func=cmd_benchmark)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, ConfigurationError)):
        return EXIT_USAGE
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return args.func(args)
    except OutfitBenchError as exc:
        print(f"outfitbench: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"outfitbench: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
