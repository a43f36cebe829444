"""Corpus files on disk: writing a generated corpus and loading it back."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..catalog import Catalog, load_catalog, load_outfits, load_users, save_catalog, save_outfits, save_users
from ..errors import DataError
from ..synthgen import Corpus, StyleWorld, dataset_id

FILES = {
    "catalog": "catalog.jsonl",
    "outfits": "outfits.jsonl",
    "questionnaire": "questionnaire.jsonl",
    "click": "clicks.jsonl",
}
MANIFEST = "corpus.json"


@dataclass
class Datasets:
    catalog: Catalog
    outfits: list
    questionnaire_users: list
    click_users: list
    dataset_id: str
    files: dict = field(default_factory=dict)
    world: StyleWorld | None = None

    def samples(self, name: str) -> list:
        return {"curated": self.outfits, "questionnaire": self.questionnaire_users,
                "click": self.click_users}[name]


def write_corpus(corpus: Corpus, directory) -> dict:
    """Write the four JSONL files and a manifest; returns the file paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "catalog": save_catalog(d / FILES["catalog"], corpus.catalog),
        "outfits": save_outfits(d / FILES["outfits"], corpus.outfits),
        "questionnaire": save_users(d / FILES["questionnaire"], corpus.questionnaire_users),
        "click": save_users(d / FILES["click"], corpus.click_users),
    }
    manifest = corpus.manifest()
    manifest["dataset_id"] = dataset_id([paths[k] for k in FILES])
    manifest["files"] = {k: FILES[k] for k in FILES}
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


def load_datasets(directory) -> Datasets:
    d = Path(directory)
    paths = {k: d / v for k, v in FILES.items()}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise DataError(f"dataset files missing: {', '.join(missing)}")
    catalog = load_catalog(paths["catalog"])
    outfits = load_outfits(paths["outfits"])
    quest = load_users(paths["questionnaire"])
    clicks = load_users(paths["click"])
    for kind, users in (("questionnaire", quest), ("actions", clicks)):
        if any(u.kind != kind for u in users):
            raise DataError(f"{FILES['questionnaire' if kind == 'questionnaire' else 'click']} holds the wrong user kind")
    for o in outfits:
        if not all(i in catalog for i in o.items):
            raise DataError("outfit references an item missing from the catalog")
    world = None
    if (d / MANIFEST).exists():
        try:
            world = StyleWorld.from_dict(json.loads((d / MANIFEST).read_text())["world"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad corpus manifest: {exc}") from None
    return Datasets(catalog, outfits, quest, clicks, dataset_id([paths[k] for k in FILES]),
                    {k: str(v) for k, v in paths.items()}, world)
