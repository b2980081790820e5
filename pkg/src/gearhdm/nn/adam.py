"""Adam optimiser with the two-stage learning-rate schedule.

Training uses a fixed initial rate dropped by a factor of ten at a set
iteration; moments use the conventional beta pair and epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import adam_update


@dataclass(frozen=True)
class LRSchedule:
    """Step schedule: ``initial`` before ``drop_iteration``, ``after`` from
    that iteration on (iterations are 1-based)."""

    initial: float = 1e-3
    drop_iteration: int = 2000
    after: float = 1e-4

    def rate(self, step: int) -> float:
        return self.initial if step < self.drop_iteration else self.after


class Adam:
    """Standard Adam with bias correction over a list of ``Param``s."""

    def __init__(self, params, schedule: LRSchedule = LRSchedule(),
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    @property
    def learning_rate(self) -> float:
        return self.schedule.rate(max(self.step_count, 1))

    def step(self):
        self.step_count += 1
        lr = self.schedule.rate(self.step_count)
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            adam_update(p.value.reshape(-1), p.grad.reshape(-1),
                        m.reshape(-1), v.reshape(-1),
                        lr, self.beta1, self.beta2, self.eps, bc1, bc2)


def adam_step(params, grads, state: dict):
    """Functional single Adam step on plain arrays (shape-checked).

    ``state`` holds ``m``/``v`` accumulators, a ``step`` counter and
    optionally a ``schedule``; arrays are updated in place and the state
    is returned for chaining.
    """
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    schedule = state.setdefault("schedule", LRSchedule())
    beta1 = state.setdefault("beta1", 0.9)
    beta2 = state.setdefault("beta2", 0.999)
    eps = state.setdefault("eps", 1e-8)
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["step"] = 0
    for p, g, m in zip(params, grads, state["m"]):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
    state["step"] += 1
    t = state["step"]
    lr = schedule.rate(t)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        adam_update(p.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                    m.reshape(-1), v.reshape(-1), lr, beta1, beta2, eps, bc1, bc2)
    return params, state
