"""Configuration, splits, checkpoints, experiment orchestration and report comparison."""

from .benchmark import SUITE, run_benchmark, suite_configs
from .checkpoint import Checkpoint, CheckpointManager, TrainerLock, load_checkpoint, save_checkpoint
from .compare import CLAIMS, Comparison, compare
from .config import ExperimentConfig, dump_config, load_config
from .data import Datasets, load_datasets, write_corpus
from .experiment import RunManifest, evaluate, prepare, run_experiment
from .splits import random_split, split, time_split

__all__ = [
    "SUITE", "run_benchmark", "suite_configs", "Checkpoint", "CheckpointManager", "TrainerLock",
    "load_checkpoint", "save_checkpoint", "CLAIMS", "Comparison", "compare", "ExperimentConfig",
    "dump_config", "load_config", "Datasets", "load_datasets", "write_corpus", "RunManifest",
    "evaluate", "prepare", "run_experiment", "random_split", "split", "time_split",
]
