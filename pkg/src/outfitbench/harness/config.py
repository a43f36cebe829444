"""Experiment configuration: flat ``key = value`` files with ``include`` support."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigurationError
from ..models.base import FAMILIES, ModelConfig

SPLIT_POLICIES = ("random_90_10", "time_based")
DATASETS = ("curated", "questionnaire", "click")
DEFAULT_DATASET = {
    "siamese": "curated", "lstm": "curated", "gpt": "curated", "bert": "curated",
    "ctx_gpt": "questionnaire", "ctx_bert": "questionnaire",
    "transformer": "click", "s2s_lstm": "click",
}
DEFAULT_SPLIT = {"curated": "random_90_10", "questionnaire": "time_based", "click": "time_based"}
MODEL_PREFIX = "model."


@dataclass
class ExperimentConfig:
    """Everything one training + evaluation run depends on.

    Model hyper-parameters live in ``model`` (keys ``model.<name>`` in the
    file format).  All randomness derives from the three named seeds.
    """

    family: str
    data_dir: str = "data"
    output_dir: str = "runs"
    dataset: str = ""
    split: str = ""
    train_fraction: float = 0.9
    val_fraction: float = 0.1
    data_seed: int = 0
    init_seed: int = 0
    eval_seed: int = 0
    epochs: int = 10
    threads: int = 1
    vocab_threshold: int = 0
    eval_limit: int = 0
    generation_limit: int = 0
    gibbs_factor: int = 10
    candidate_cap: int = 100
    model: dict = field(default_factory=dict)
    run_name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        self.dataset = self.dataset or DEFAULT_DATASET[self.family]
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"unknown dataset {self.dataset!r}; choose from {DATASETS}")
        self.split = self.split or DEFAULT_SPLIT[self.dataset]
        if self.split not in SPLIT_POLICIES:
            raise ConfigurationError(f"unknown split policy {self.split!r}; choose from {SPLIT_POLICIES}")
        if abs(self.train_fraction + self.val_fraction - 1.0) > 1e-9:
            raise ConfigurationError("train_fraction + val_fraction must equal 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must lie strictly between 0 and 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")
        if self.vocab_threshold <= 0:
            self.vocab_threshold = 8 if self.dataset == "curated" else 3
        for name in ("data_seed", "init_seed", "eval_seed"):
            if not isinstance(getattr(self, name), int):
                raise ConfigurationError(f"{name} must be an explicit integer")
        self.model = _coerce_model(self.model)
        self.model_config()  # validate early
        self.run_name = self.run_name or self.default_name()

    def default_name(self) -> str:
        return f"{self.model_id}-s{self.init_seed}"

    @property
    def model_id(self) -> str:
        """Family name, qualified by the dataset when it is not the family's usual one."""
        if self.dataset == DEFAULT_DATASET[self.family]:
            return self.family
        return f"{self.family}@{self.dataset}"

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig.for_family(self.family, **_coerce_model(self.model))
        except TypeError as exc:
            raise ConfigurationError(f"bad model option: {exc}") from None

    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_name

    def to_dict(self) -> dict:
        return asdict(self)

    def to_lines(self) -> list[str]:
        """Canonical ``key = value`` lines (model options last, sorted)."""
        out = []
        for f in fields(self):
            if f.name == "model":
                continue
            out.append(f"{f.name} = {getattr(self, f.name)}")
        for k in sorted(self.model):
            out.append(f"{MODEL_PREFIX}{k} = {self.model[k]}")
        return out

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs, model = {}, {}
        for key, raw in values.items():
            if key.startswith(MODEL_PREFIX):
                model[key[len(MODEL_PREFIX):]] = raw
                continue
            if key not in known:
                raise ConfigurationError(f"unknown configuration key {key!r}")
            kwargs[key] = _coerce(key, raw, known[key].default)
        if "family" not in kwargs:
            raise ConfigurationError("configuration needs a 'family' key")
        kwargs["model"] = model
        return cls(**kwargs)


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r}") from None
    return raw


def _coerce_model(opts: dict) -> dict:
    known = {f.name: f.default for f in fields(ModelConfig)}
    out = {}
    for k, v in opts.items():
        if k not in known or k in ("family", "context_mode"):
            raise ConfigurationError(f"unknown model option {k!r}")
        out[k] = _coerce(k, v, known[k])
    return out


def parse_config_text(text: str, base_dir: Path | None = None, _seen=None) -> dict:
    """Parse ``key = value`` lines; ``include = path`` pulls in another file first.

    Later keys override earlier ones, so values after an include win.
    """
    values: dict = {}
    _seen = _seen or set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "include":
            values.update(load_config_values(Path(base_dir or ".") / value, _seen))
        else:
            values[key] = value
    return values


def load_config_values(path, _seen=None) -> dict:
    path = Path(path).resolve()
    _seen = set() if _seen is None else _seen
    if path in _seen:
        raise ConfigurationError(f"include cycle through {path}")
    if not path.exists():
        raise ConfigurationError(f"config file {path} not found")
    return parse_config_text(path.read_text(), path.parent, _seen | {path})


def apply_env(values: dict) -> dict:
    """Environment overrides: OUTFITBENCH_OUTPUT_DIR and OUTFITBENCH_THREADS."""
    values = dict(values)
    if os.environ.get("OUTFITBENCH_OUTPUT_DIR"):
        values["output_dir"] = os.environ["OUTFITBENCH_OUTPUT_DIR"]
    if os.environ.get("OUTFITBENCH_THREADS"):
        values["threads"] = os.environ["OUTFITBENCH_THREADS"]
    return values


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    values = load_config_values(path)
    values.update(overrides or {})
    return ExperimentConfig.from_mapping(apply_env(values))


def dump_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text("\n".join(config.to_lines()) + "\n")
    return path
