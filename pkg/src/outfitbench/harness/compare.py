"""Comparison of evaluation reports: per-metric rankings and the directional checklist."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..errors import ComparisonError
from ..evaluation import HEADERS, METRIC_ORDER, EvalReport, format_table

LOWER_IS_BETTER = {"pp"}


@dataclass
class Claim:
    key: str
    description: str
    models: tuple
    test: Callable[[dict], bool]


def _m(reports: dict, model: str, metric: str) -> float:
    v = reports[model].metrics.get(metric)
    return float("nan") if v is None else float(v)


def _fitb_mean(reports: dict, model: str) -> float:
    """Mean recall over the FITB cutoffs the report holds (the whole recall row)."""
    vals = [v for k, v in reports[model].metrics.items() if k.startswith("fitb@") and v is not None]
    return float(sum(vals) / len(vals)) if vals else float("nan")


def _oracle_claim(r: dict) -> bool:
    notes = r["gpt"].notes
    rate = notes.get("oracle_rate")
    if rate is None:
        return False
    base = max(notes.get("random_base_rate", 0.0), notes.get("layout_base_rate", 0.0))
    return rate > 0 and rate >= 5 * base


CLAIMS = (
    Claim("a", "BERT beats GPT on FITB@1", ("bert", "gpt"),
          lambda r: _m(r, "bert", "fitb@1") > _m(r, "gpt", "fitb@1")),
    Claim("b", "GPT has lower perplexity than BERT", ("gpt", "bert"),
          lambda r: _m(r, "gpt", "pp") < _m(r, "bert", "pp")),
    Claim("c", "GPT and BERT beat LSTM and Siamese on CP-AUC", ("gpt", "bert", "lstm", "siamese"),
          lambda r: min(_m(r, "gpt", "cp_auc"), _m(r, "bert", "cp_auc"))
          > max(_m(r, "lstm", "cp_auc"), _m(r, "siamese", "cp_auc"))),
    Claim("d", "context lowers GPT perplexity and raises BERT FITB (mean recall over cutoffs) on questionnaire data",
          ("ctx_gpt", "gpt@questionnaire", "ctx_bert", "bert@questionnaire"),
          lambda r: _m(r, "ctx_gpt", "pp") < _m(r, "gpt@questionnaire", "pp")
          and _fitb_mean(r, "ctx_bert") > _fitb_mean(r, "bert@questionnaire")),
    Claim("e", "Transformer beats Siamese and seq2seq LSTM on brand-category CTR",
          ("transformer", "siamese@click", "s2s_lstm"),
          lambda r: _m(r, "transformer", "brand_category") > _m(r, "siamese@click", "brand_category")
          and _m(r, "transformer", "brand_category") > _m(r, "s2s_lstm", "brand_category")),
    Claim("f", "generated GPT outfits pass the oracle at >= 5x the random-set rate", ("gpt",), _oracle_claim),
)


@dataclass
class ClaimResult:
    key: str
    description: str
    votes: dict            # seed -> bool
    missing: tuple = ()

    @property
    def status(self) -> str:
        if not self.votes:
            return "SKIP"
        return "PASS" if sum(self.votes.values()) * 2 > len(self.votes) else "FAIL"

    def line(self) -> str:
        if not self.votes:
            return f"SKIP ({self.key}) {self.description}: missing {', '.join(self.missing)}"
        tally = " ".join(f"s{s}={'y' if v else 'n'}" for s, v in sorted(self.votes.items()))
        return f"{self.status} ({self.key}) {self.description} [{tally}]"


@dataclass
class Comparison:
    reports: list
    rankings: dict
    claims: list | None = None
    table: str = ""
    notes: list = field(default_factory=list)

    def render(self) -> str:
        out = [self.table, "", "Rankings (best first):"]
        for metric, ranked in self.rankings.items():
            cells = ", ".join(f"{mid}/s{seed}={_fmt(metric, v)}" for mid, seed, v in ranked)
            out.append(f"  {HEADERS[metric]}: {cells}")
        if self.claims is None:
            out += ["", "Checklist skipped (single report)."]
        else:
            out += ["", "Directional checklist (majority over seeds):"]
            out += [f"  {c.line()}" for c in self.claims]
        return "\n".join(out)


def _fmt(metric: str, v: float) -> str:
    return f"{v:.2f}" if metric == "pp" else f"{100 * v:.1f}%"


def rank_metric(reports: Sequence[EvalReport], metric: str) -> list[tuple]:
    """Reports holding a finite ``metric``, best first; ties keep (model, seed) order."""
    rows = [(r.model_id, r.seed, float(r.metrics[metric])) for r in reports
            if r.metrics.get(metric) is not None and math.isfinite(float(r.metrics[metric]))]
    sign = 1 if metric in LOWER_IS_BETTER else -1
    return sorted(rows, key=lambda t: (sign * t[2], t[0], t[1]))


def checklist(reports: Sequence[EvalReport]) -> list[ClaimResult]:
    by_seed: dict = defaultdict(dict)
    for r in reports:
        by_seed[r.seed][r.model_id] = r
    results = []
    for claim in CLAIMS:
        votes = {}
        for seed, group in sorted(by_seed.items()):
            if all(m in group for m in claim.models):
                votes[seed] = bool(claim.test(group))
        present = {m for g in by_seed.values() for m in g}
        results.append(ClaimResult(claim.key, claim.description, votes,
                                   tuple(m for m in claim.models if m not in present)))
    return results


def compare(reports: Sequence[EvalReport]) -> Comparison:
    """Rank every metric across reports and, for two or more reports, run the checklist."""
    reports = list(reports)
    if not reports:
        raise ComparisonError("nothing to compare")
    ids = sorted({r.dataset_id for r in reports})
    if len(ids) > 1:
        raise ComparisonError(f"reports come from different datasets: {', '.join(ids)}")
    seen = set()
    for r in reports:
        if (r.model_id, r.seed) in seen:
            raise ComparisonError(f"duplicate report for {r.model_id} seed {r.seed}")
        seen.add((r.model_id, r.seed))
    rankings = {}
    for metric in METRIC_ORDER:
        ranked = rank_metric(reports, metric)
        if ranked:
            rankings[metric] = ranked
    claims = checklist(reports) if len(reports) > 1 else None
    return Comparison(reports, rankings, claims, format_table(reports))
