"""Adam and cosine annealing with warm restarts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CosineSchedule:
    lr0: float = 1e-3
    first_period: float = 20.0
    period_mult: float = 2.0
    floor: float = 0.0


def lr_at(epoch: float, schedule: CosineSchedule = CosineSchedule()) -> float:
    """Learning rate at a (fractional) epoch.

    Periods are ``(start, start + T]``: the rate reaches the floor exactly at
    the end of a period and jumps back to ``lr0`` immediately after it.
    ``lr_at(0) == lr0``.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch == 0:
        return schedule.lr0
    start, period = 0.0, schedule.first_period
    while epoch > start + period:
        start += period
        period *= schedule.period_mult
    t = (epoch - start) / period
    return schedule.floor + 0.5 * (schedule.lr0 - schedule.floor) * (1 + math.cos(math.pi * t))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def init(self, params: dict[str, np.ndarray]) -> AdamState:
        return AdamState(0, {k: np.zeros_like(p) for k, p in params.items()},
                         {k: np.zeros_like(p) for k, p in params.items()})

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             state: AdamState, lr: float) -> None:
        """Bias-corrected Adam update, in place on ``params`` and ``state``."""
        state.step += 1
        t = state.step
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for k, p in params.items():
            g = grads[k]
            m, v = state.m[k], state.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p -= update.astype(p.dtype, copy=False)


def adam_step(params, grads, state: AdamState, lr: float, adam: Adam = Adam()) -> AdamState:
    adam.step(params, grads, state, lr)
    return state
