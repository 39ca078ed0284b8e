"""Adam with a staircase learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_factor: float = 0.7
    decay_every: int = 50_000
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or self.decay_factor <= 0 or self.decay_every <= 0:
            raise ValueError("lr, decay_factor and decay_every must be positive")

    def effective_lr(self, iteration: int | None = None) -> float:
        """Learning rate in force for ``iteration`` (defaults to the next update)."""
        it = self.step if iteration is None else iteration
        return self.lr * self.decay_factor ** (it // self.decay_every)


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """Update every parameter in place from its ``.grad``; missing grads count as zero."""
    grads = {}
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r}")
        grads[name] = g

    lr = state.effective_lr()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = (b1 * m + (1 - b1) * g).astype(p.dtype)
        v = (b2 * v + (1 - b2) * g * g).astype(p.dtype)
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data = (p.data - update).astype(p.dtype)
