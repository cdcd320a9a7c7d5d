"""Adam optimizer and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Sequence

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


class Adam:
    """Standard Adam with bias correction, updating parameters in place."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = list(params)
        self.state = OptimizerState(
            learning_rate=lr, beta1=betas[0], beta2=betas[1], eps=eps,
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
        )

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.state, self.params)


def adam_step(state: OptimizerState, params: Sequence[Tensor]) -> None:
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter of shape {p.shape} has no gradient")
        if p.grad.shape != p.data.shape:
            raise ContractError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``decay_factor`` once the training loss
    has failed to improve for more than ``patience`` consecutive epochs."""

    decay_factor: float = 0.5
    patience: int = 10
    threshold: float = 1e-8
    best_loss: float = math.inf
    epochs_since_improvement: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be positive")

    def step(self, train_loss: float, state: OptimizerState) -> None:
        scheduler_step(self, train_loss, state)


def scheduler_step(s: PlateauScheduler, train_loss: float, state: OptimizerState) -> None:
    if train_loss < s.best_loss - s.threshold:
        s.best_loss = train_loss
        s.epochs_since_improvement = 0
        return
    s.epochs_since_improvement += 1
    if s.epochs_since_improvement > s.patience:
        state.learning_rate *= s.decay_factor
        s.epochs_since_improvement = 0
