"""SGD with optional momentum and the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from decimal import Decimal
from typing import Iterable

import numpy as np

from .errors import ConfigError, ContractError
from .nn import Parameter


@dataclass
class ScheduleConfig:
    lr0: float = 0.01
    gamma: float = 0.1
    step_epochs: int = 20
    momentum: float = 0.0
    epochs: int = 70
    batch_size: int = 8

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.step_epochs < 1:
            raise ConfigError(f"step_epochs must be >= 1, got {self.step_epochs}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(epoch: int, s: ScheduleConfig) -> float:
    """lr0 · gamma^⌊epoch / step_epochs⌋.

    Evaluated in decimal on the shortest repr of lr0 and gamma and rounded
    once, so 0.01 · 0.1² is exactly 1e-4 rather than 1.0000000000000002e-4.
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return float(Decimal(repr(float(s.lr0))) * Decimal(repr(float(s.gamma))) ** (epoch // s.step_epochs))


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float = 0.0) -> None:
    """In-place update ``v ← momentum·v + g; w ← w − lr·v``.

    The velocity buffer lives on the parameter itself.  Non-trainable
    parameters are skipped.
    """
    for p in params:
        if not p.trainable:
            continue
        if p.grad is None:
            raise ContractError(f"parameter {p.name or '<unnamed>'} has no gradient; call backward() first")
        if momentum:
            v = getattr(p, "velocity", None)
            if v is None:
                v = np.zeros_like(p.data)
            v = momentum * v + p.grad
            p.velocity = v
        else:
            v = p.grad
        if lr:
            p.data -= (lr * v).astype(p.data.dtype, copy=False)
