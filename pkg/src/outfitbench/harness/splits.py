"""Train/validation splits: seeded random 90/10 and time-based cut-off."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from ..rng import stream


def _sizes(n: int, val_fraction: float) -> int:
    n_val = int(round(n * val_fraction))
    if n_val < 1 or n_val >= n:
        raise ConfigurationError(f"cannot split {n} samples with validation fraction {val_fraction}")
    return n_val


def random_split(samples: Sequence, seed: int, val_fraction: float = 0.1):
    """Seeded permutation; the last ``round(n * val_fraction)`` go to validation.

    Both halves keep the original sample order.
    """
    n = len(samples)
    n_val = _sizes(n, val_fraction)
    perm = stream(seed, "split").permutation(n)
    val_idx = np.sort(perm[n - n_val:])
    mask = np.zeros(n, dtype=bool)
    mask[val_idx] = True
    return [s for s, m in zip(samples, mask) if not m], [s for s, m in zip(samples, mask) if m]


def time_split(samples: Sequence, val_fraction: float = 0.1, key=lambda s: s.timestamp):
    """Everything at or after the ``1 - val_fraction`` timestamp quantile is validation.

    The cut never separates equal timestamps, so the validation share can
    exceed ``val_fraction`` slightly when timestamps tie at the cut.
    """
    n = len(samples)
    _sizes(n, val_fraction)
    times = []
    for s in samples:
        t = key(s)
        if t is None:
            raise ConfigurationError("time-based split needs a timestamp on every sample")
        times.append(float(t))
    ordered = np.sort(np.asarray(times))
    cut = ordered[n - int(math.ceil(n * val_fraction))]
    train = [s for s, t in zip(samples, times) if t < cut]
    val = [s for s, t in zip(samples, times) if t >= cut]
    if not train or not val:
        raise ConfigurationError("timestamps do not allow a time-based split")
    return train, val


def split(samples: Sequence, policy: str, seed: int, val_fraction: float = 0.1):
    """Disjoint, exhaustive (train, validation) partition under ``policy``."""
    if policy == "random_90_10":
        return random_split(samples, seed, val_fraction)
    if policy == "time_based":
        return time_split(samples, val_fraction)
    raise ConfigurationError(f"unknown split policy {policy!r}")
