from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from typeguard import typechecked

from est_engine.autodiff import Tensor
from est_engine.exceptions import NonFiniteError
from est_engine.model.params import ModelParams
from est_engine.training.config import LRScheduleConfig, OptimizerConfig

NamedTensors = Sequence[tuple[str, Tensor]]


@dataclass
class AdamWState:
    """First and second moment estimates, keyed by parameter name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, named: NamedTensors) -> AdamWState:
        return cls(
            m={name: np.zeros_like(t.data) for name, t in named},
            v={name: np.zeros_like(t.data) for name, t in named},
        )

    def copy(self) -> AdamWState:
        return AdamWState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


@typechecked
def adamw_step(
    named: NamedTensors,
    state: AdamWState,
    step: int,
    lr: float,
    settings: OptimizerConfig,
    decays: Callable[[str], bool] = ModelParams.decays,
) -> None:
    """
    One AdamW update with bias correction and decoupled weight decay,
    applied in place to every tensor in `named` from its `grad`.

    Args:
        named: `(name, tensor)` pairs, e.g. `params.named_parameters()`.
        state: Moment estimates, updated in place.
        step: 1-based index of this update, used for bias correction.
        lr: Learning rate of this step.
        settings: Betas, epsilon and weight decay.
        decays: Whether weight decay applies to a parameter name.

    Raises:
        NonFiniteError: If any gradient holds NaN or infinity. Nothing is
            updated in that case.
    """
    bad = [
        name
        for name, t in named
        if t.grad is not None and not np.isfinite(t.grad).all()
    ]
    if bad:
        raise NonFiniteError("gradient", step, bad)

    beta1, beta2 = settings.betas
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step

    for name, t in named:
        if t.grad is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m, v, g = state.m[name], state.v[name], t.grad

        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g

        if settings.weight_decay and decays(name):
            t.data *= 1.0 - lr * settings.weight_decay
        t.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + settings.eps)


@typechecked
def lr_at(
    schedule: LRScheduleConfig, peak_lr: float, step: int, total_steps: int
) -> float:
    """
    Learning rate of a step: linear warmup from 0 to `peak_lr` over
    `warmup_steps`, then linear or cosine decay that reaches `min_lr` at
    `total_steps`.

    Raises:
        ValueError: If `step` is not positive.
    """
    if step < 1:
        raise ValueError(f"step must be at least 1, got {step}")

    warmup = schedule.warmup_steps
    if warmup > 0 and step <= warmup:
        return peak_lr * step / warmup

    progress = min(1.0, (step - warmup) / max(1, total_steps - warmup))
    span = peak_lr - schedule.min_lr
    if schedule.decay == "linear":
        return schedule.min_lr + span * (1.0 - progress)
    return schedule.min_lr + span * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(tensors: Sequence[Tensor], max_norm: float) -> float:
    """
    Scale every gradient so their joint L2 norm is at most `max_norm`.

    Returns:
        The norm before clipping.
    """
    grads = [t.grad for t in tensors if t.grad is not None]
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if total > max_norm:
        factor = max_norm / (total + 1e-6)
        for g in grads:
            g *= factor
    return total
