"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from catchvqa.errors import ContractError


@dataclass
class AdamWState:
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adamw_step(params, state: AdamWState):
    """One AdamW update over ``params`` (a ParameterStore or iterable of Parameters).

    Frozen parameters are skipped and never get moment buffers.
    """
    trainable = [p for p in params if p.trainable]
    missing = [p.name for p in trainable if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for trainable parameters: {missing}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr = state.learning_rate
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p in trainable:
        g = p.grad
        m = state.first_moment.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.second_moment[p.name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[p.name] = m
        state.second_moment[p.name] = v
        new = p.data * (1.0 - lr * state.weight_decay)
        new = new - lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.tensor.data = new


class AdamW:
    """Thin stateful wrapper: ``opt.zero_grad(); loss.backward(); opt.step()``."""

    def __init__(self, params, lr=2e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.state = AdamWState(lr, betas[0], betas[1], eps, weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.tensor.grad = None

    def step(self):
        adamw_step(self.params, self.state)
