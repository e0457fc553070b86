"""Parameter update rules: plain gradient descent and Adam."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import ConfigError, StateError
from .tensor import Tensor


class Optimizer:
    kind = "base"

    def __init__(self, params: Iterable[Tensor], lr: float):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.step_count = 0

    def _grads(self) -> list[np.ndarray]:
        missing = [p.name or i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise StateError(f"parameters without gradients: {missing}")
        return [p.grad for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """theta <- theta - lr * grad."""

    kind = "sgd"

    def step(self) -> None:
        for p, g in zip(self.params, self._grads()):
            p.data = p.data - self.lr * g
        self.step_count += 1
        self.zero_grad()


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ConfigError(f"betas must lie in (0, 1), got {beta1}, {beta2}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.first_moments = [np.zeros_like(p.data) for p in self.params]
        self.second_moments = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        step_size = self.lr / bc1
        root_bc2 = np.sqrt(bc2)
        for p, g, m, v in zip(self.params, grads, self.first_moments, self.second_moments):
            # moments are updated in place; this step is the hot loop of every trial
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v)
            denom /= root_bc2
            denom += self.eps
            p.data = p.data - step_size * m / denom
        self.zero_grad()


def make_optimizer(kind: str, params, lr: float) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ConfigError(f"unknown optimizer {kind!r}")
