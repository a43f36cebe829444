"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2 and everything else raised at runtime exits 3.
"""


class OutfitBenchError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigurationError(OutfitBenchError, ValueError):
    """Invalid model, layer or experiment configuration."""

    exit_code = 1


class InputError(OutfitBenchError, ValueError):
    """An operation received an input outside its contract."""


class UsageError(OutfitBenchError, RuntimeError):
    """An API was called in the wrong order or on the wrong object."""


class DataError(OutfitBenchError):
    """A dataset file is missing, malformed or has the wrong schema."""

    exit_code = 2


class GenerationError(OutfitBenchError):
    """Outfit generation cannot proceed."""


class RankingError(OutfitBenchError):
    """Nearest-neighbour ranking cannot proceed."""


class MetricError(OutfitBenchError):
    """A metric was asked for on too little data."""


class ComparisonError(OutfitBenchError):
    """Reports passed to compare() are not comparable."""


class TrainingError(OutfitBenchError):
    """Training diverged or could not continue."""


class CandidateLookupError(OutfitBenchError, KeyError):
    """An anchor item has no entry in a candidate-outfit index."""

    def __str__(self):
        return Exception.__str__(self)
