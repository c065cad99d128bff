"""
Adam / AdamW updates and the linear warmup + linear decay schedule.
"""

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from app.core.exceptions import DataError, TrainingError
from app.schemas.experiment import TrainConfig

Arrays = Dict[str, np.ndarray]


def lr_at(step: int, config: TrainConfig) -> float:
    """
    Learning rate at ``step``; the trainer uses lr_at(k) for its k-th update, k from 0.

    Rises linearly from 0 to ``peak_lr`` over ``warmup_steps`` and falls
    linearly to 0 at ``total_steps``. With no warmup the decay starts at the peak.

    Raises:
        DataError: If the schedule is unresolved or step is out of range
    """
    total, warmup = config.total_steps, config.warmup_steps
    if total is None or warmup is None:
        raise DataError("schedule needs resolved total_steps and warmup_steps")
    if step < 0 or step > total:
        raise DataError(f"step {step} outside [0, {total}]")
    if warmup and step <= warmup:
        return config.peak_lr * step / warmup
    if total == warmup:
        return config.peak_lr
    return config.peak_lr * (total - step) / (total - warmup)


@dataclass
class OptimizerState:
    """First and second moment estimates plus the number of updates taken."""

    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Arrays) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def _check_grads(grads: Arrays) -> None:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name}")


def adam_step(
    params: Arrays,
    grads: Arrays,
    state: OptimizerState,
    lr: float,
    config: TrainConfig,
) -> OptimizerState:
    """
    One bias-corrected Adam update, in place on ``params``.

    Raises:
        TrainingError: If any gradient is NaN or infinite
    """
    _check_grads(grads)
    if not state.m:
        state = OptimizerState.zeros_like(params)
    t = state.step_count + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t

    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.epsilon)

    state.step_count = t
    return state


def adamw_step(
    params: Arrays,
    grads: Arrays,
    state: OptimizerState,
    lr: float,
    config: TrainConfig,
) -> OptimizerState:
    """
    Decoupled weight decay, then the Adam update.

    Decay scales parameters by ``1 - lr * weight_decay`` and is not applied
    through the gradient, so it does not touch the moment estimates.
    """
    _check_grads(grads)
    if config.weight_decay:
        for p in params.values():
            p -= lr * config.weight_decay * p
    return adam_step(params, grads, state, lr, config)


STEP_FUNCTIONS = {"adam": adam_step, "adamw": adamw_step}


def optimizer_step(params: Arrays, grads: Arrays, state: OptimizerState, lr: float, config: TrainConfig):
    if not math.isfinite(lr):
        raise TrainingError(f"non-finite learning rate {lr}")
    return STEP_FUNCTIONS[config.optimizer](params, grads, state, lr, config)
