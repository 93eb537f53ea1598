"""SGD with momentum and Adam, both with weight decay coupled into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("sgd_momentum", "adam")


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    slots: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"optimizer kind must be one of {KINDS}, got {self.kind!r}")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")


def init_state(kind: str, params, **hyper) -> OptimizerState:
    state = OptimizerState(kind=kind, **hyper)
    if kind == "sgd_momentum":
        state.slots = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
    else:
        state.slots = [
            (np.zeros_like(np.asarray(p, dtype=np.float64)), np.zeros_like(np.asarray(p, dtype=np.float64)))
            for p in params
        ]
    return state


def _check(params, grads, state: OptimizerState, kind: str) -> None:
    if state.kind != kind:
        raise ValueError(f"state is for {state.kind!r}, not {kind!r}")
    if not (len(params) == len(grads) == len(state.slots)):
        raise ValueError(
            f"{len(params)} params, {len(grads)} grads and {len(state.slots)} slots do not line up"
        )
    for i, (p, g, slot) in enumerate(zip(params, grads, state.slots)):
        ref = slot[0] if kind == "adam" else slot
        if p.shape != g.shape or p.shape != ref.shape:
            raise ValueError(f"shape mismatch at parameter {i}: {p.shape}, {g.shape}, slot {ref.shape}")


def sgd_step(params, grads, state: OptimizerState) -> OptimizerState:
    """In place: g' = g + wd*w; v = momentum*v + g'; w -= lr*v."""
    _check(params, grads, state, "sgd_momentum")
    for w, g, v in zip(params, grads, state.slots):
        if state.weight_decay:
            g = g + state.weight_decay * w
        v *= state.momentum
        v += g
        w -= state.learning_rate * v
    state.step_count += 1
    return state


def adam_step(params, grads, state: OptimizerState) -> OptimizerState:
    """In place bias-corrected Adam on g' = g + wd*w."""
    _check(params, grads, state, "adam")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for w, g, (m, v) in zip(params, grads, state.slots):
        if state.weight_decay:
            g = g + state.weight_decay * w
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return state


def step(params, grads, state: OptimizerState) -> OptimizerState:
    if state.kind == "sgd_momentum":
        return sgd_step(params, grads, state)
    return adam_step(params, grads, state)
