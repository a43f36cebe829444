"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, watch_kinks


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``max |a - b| / max(|a|, |b|, floor)`` elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                    max_entries: int = 12, rng: np.random.Generator | None = None,
                    floor: float = 1e-4) -> float:
    """Worst relative error between analytic and numeric gradients.

    ``loss_fn`` rebuilds the forward graph from the current parameter values.
    At most ``max_entries`` coordinates per parameter are probed, chosen with
    ``rng`` (all of them when the parameter is small).  ``floor`` bounds the
    denominator from below, so coordinates whose true gradient is ~0 are
    held to an absolute tolerance of ``floor`` times the relative one.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        picks = np.arange(flat.size) if flat.size <= max_entries else rng.choice(flat.size, max_entries, replace=False)
        for k in picks:
            old = flat[k]
            flat[k] = old + eps
            up = float(loss_fn().data)
            flat[k] = old - eps
            down = float(loss_fn().data)
            flat[k] = old
            numeric = (up - down) / (2 * eps)
            worst = max(worst, relative_error(analytic.reshape(-1)[k], numeric, floor))
    return worst


def kink_margin(loss_fn: Callable[[], Tensor]) -> float:
    """Distance of the nearest ReLU input to zero during one forward pass."""
    with watch_kinks() as box:
        loss_fn()
    return box[0]
