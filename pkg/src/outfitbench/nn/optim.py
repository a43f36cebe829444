"""Parameter store with Adam updates."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError


class ParamStore:
    """Named parameters, their gradient slots and Adam moment estimates."""

    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = None):
        self.params = dict(named_params)
        if not self.params:
            raise ConfigurationError("parameter store needs at least one parameter")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.step_count = 0
        self.zero_grad()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def grad(self, name: str) -> np.ndarray:
        p = self.params[name]
        return p.grad if p.grad is not None else np.zeros_like(p.data)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((self.grad(k).astype(np.float64) ** 2).sum()) for k in self.params)))

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = self.grad(name) * scale
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype)
        self.zero_grad()

    # checkpoint support
    def state(self) -> dict[str, np.ndarray]:
        out = {"adam.step": np.array([self.step_count], dtype=np.int64)}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        self.step_count = int(np.asarray(state["adam.step"]).reshape(-1)[0])
        for k, p in self.params.items():
            self.m[k] = np.asarray(state[f"adam.m.{k}"], dtype=p.dtype).copy()
            self.v[k] = np.asarray(state[f"adam.v.{k}"], dtype=p.dtype).copy()


def optimizer_step(store: ParamStore, learning_rate: float | None = None) -> ParamStore:
    store.step(learning_rate)
    return store
