"""Adam and the one-cycle learning-rate policy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState,
              lr: float | None = None) -> list[Tensor]:
    """Apply one bias-corrected Adam update to ``params`` in place.

    A ``None`` gradient is treated as zero.  ``lr`` overrides ``state.lr``
    for this step (the scheduler sets it).
    """
    if len(params) != len(grads):
        raise ShapeError("adam_step", (len(params),), (len(grads),))
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("adam_step", (len(state.m),), (len(params),))
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError("adam_step", p.shape, g.shape)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


@dataclass(frozen=True)
class OneCycleSchedule:
    max_lr: float
    total_steps: int
    warmup_fraction: float = 0.3
    start_div: float = 25.0
    final_div: float = 1e4

    @property
    def peak_step(self) -> int:
        return int(round(self.warmup_fraction * self.total_steps))


def _cosine(start: float, end: float, frac: float) -> float:
    return end + (start - end) * (1.0 + math.cos(math.pi * frac)) / 2.0


def onecycle_lr(step: int, sched: OneCycleSchedule) -> float:
    """Cosine warmup to ``max_lr`` then cosine anneal to ``max_lr / final_div``."""
    if not 0 <= step < sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps})")
    peak = min(sched.peak_step, sched.total_steps - 1)
    start = sched.max_lr / sched.start_div
    final = sched.max_lr / sched.final_div
    if step <= peak:
        return sched.max_lr if peak == 0 else _cosine(start, sched.max_lr, step / peak)
    return _cosine(sched.max_lr, final, (step - peak) / (sched.total_steps - 1 - peak))
