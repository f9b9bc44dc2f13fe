"""SGD with momentum, subset-scoped weight decay, and step LR decay.

A step updates only the parameters it is given; everything else, momentum
buffers included, stays bitwise untouched. That subset scoping is how the
training loop freezes the inactive head: the frozen head is simply never in
the stepped subset, so it receives neither gradient updates nor weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor


@dataclass
class SgdState:
    """Momentum buffers plus fixed hyperparameters for one training session.

    A buffer exists for a parameter iff that parameter has ever been part of
    a stepped subset.
    """

    momentum: float = 0.9
    weight_decay: float = 5e-4
    decay_bn_params: bool = True
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def decay_for(self, name: str) -> float:
        if not self.decay_bn_params and ("/bn/gamma" in name or "/bn/beta" in name):
            return 0.0
        return self.weight_decay


def sgd_step(params_subset: Mapping[str, Tensor], state: SgdState, lr: float) -> None:
    """One momentum-SGD update over exactly the given subset.

    For each parameter: g = grad + decay * p; buf = momentum * buf + g;
    p -= lr * buf. Gradients of the subset are cleared afterwards. A missing
    gradient means the caller's graph and subset disagree and is an error.
    """
    for name, p in params_subset.items():
        if p.grad is None:
            raise ValueError(f"sgd_step: parameter {name!r} has no gradient")
    for name, p in params_subset.items():
        g = p.grad
        decay = state.decay_for(name)
        if decay:
            g = g + p.data.dtype.type(decay) * p.data
        buf = state.buffers.get(name)
        if buf is None:
            buf = np.zeros_like(p.data)
            state.buffers[name] = buf
        mu = p.data.dtype.type(state.momentum)
        buf *= mu
        buf += g
        p.data -= p.data.dtype.type(lr) * buf
        p.grad = None


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant decay: lr(epoch) = initial / factor^(epoch // period)."""

    initial: float = 0.1
    factor: float = 5.0
    period: int = 50

    def __post_init__(self):
        if self.initial <= 0 or self.factor < 1 or self.period < 1:
            raise ConfigurationError(
                f"learning-rate schedule ({self.initial}, {self.factor}, {self.period}) is invalid"
            )


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
    return schedule.initial / schedule.factor ** (epoch // schedule.period)
