"""Tree-structured optimizers and moving averages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trees import assert_same_structure, tree_map, tree_zeros_like


@dataclass
class AdamWState:
    """First and second moments plus the step counter."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def init(cls, params) -> "AdamWState":
        return cls(m=tree_zeros_like(params), v=tree_zeros_like(params), step=0)


def adamw_step(
    state: AdamWState,
    params,
    grads,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One AdamW update with bias correction and decoupled weight decay.

    Returns ``(new_params, new_state)``; the input state is not mutated.
    """
    assert_same_structure(params, grads)
    assert_same_structure(params, state.m)
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t

    new_m = tree_map(lambda m, g: beta1 * m + (1.0 - beta1) * g, state.m, grads)
    new_v = tree_map(lambda v, g: beta2 * v + (1.0 - beta2) * g * g, state.v, grads)

    def update(p, m, v):
        step = m / c1 / (np.sqrt(v / c2) + eps)
        return p - lr * step - lr * weight_decay * p

    new_params = tree_map(update, params, new_m, new_v)
    return new_params, AdamWState(m=new_m, v=new_v, step=t)


def adam_step(state, params, grads, lr, **kw):
    """Plain Adam: AdamW with zero decoupled weight decay."""
    return adamw_step(state, params, grads, lr, weight_decay=0.0, **kw)


def ema_combine(old, new, gamma: float):
    """Elementwise ``gamma * old + (1 - gamma) * new`` over matching trees."""
    assert_same_structure(old, new)
    g = float(gamma)
    return tree_map(lambda a, b: g * a + (1.0 - g) * b, old, new)
