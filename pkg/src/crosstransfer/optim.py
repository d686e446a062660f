"""Adagrad with a configurable accumulator decay.

Update per parameter: acc <- decay * acc + g^2, then
theta <- theta - lr * g / (sqrt(acc) + eps).  With decay = 1 this is plain
Adagrad; the default decay < 1 keeps long-running continual training from
freezing the effective step size.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Node


class Adagrad:
    def __init__(
        self,
        params,
        learning_rate: float = 0.01,
        accumulator_decay: float = 0.9999,
        epsilon: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
        if not 0.0 < accumulator_decay <= 1.0:
            raise ValueError(f"accumulator_decay must be in (0, 1], got {accumulator_decay}")
        if epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        self.params: list[Node] = list(params)
        for p in self.params:
            if not p.requires_grad:
                raise ValueError(f"optimizer given non-trainable node {p.name!r}")
        self.learning_rate = learning_rate
        self.accumulator_decay = accumulator_decay
        self.epsilon = epsilon
        self.accumulators = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        """Apply one update from the gradients currently on the parameters.

        Parameters whose grad was never populated this step are skipped
        entirely (value and accumulator untouched).
        """
        for p, acc in zip(self.params, self.accumulators):
            if p.grad is None:
                continue
            g = p.grad
            if np.any(np.isnan(g)):
                raise FloatingPointError(f"NaN gradient for parameter {p.name!r}")
            acc *= self.accumulator_decay
            acc += g * g
            p.value = p.value - self.learning_rate * g / (np.sqrt(acc) + self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
