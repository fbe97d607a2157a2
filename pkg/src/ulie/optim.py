"""SGD with momentum and L2 weight decay, plus a step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    # (epoch, divisor): from that epoch on the rate is divided by divisor
    schedule: tuple = ((100, 10.0), (150, 10.0), (200, 10.0))

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for start, divisor in self.schedule:
            if epoch >= start:
                lr /= divisor
        return lr


def sgd_step(params: dict, grads: dict, state: dict, cfg: SgdConfig, epoch: int = 0):
    """One in-place update of every array in ``params``::

        v <- momentum * v + (g + weight_decay * w)
        w <- w - lr(epoch) * v

    ``state`` holds the velocities and is created lazily.
    """
    lr = cfg.lr_at(epoch)
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        d = g + cfg.weight_decay * w if cfg.weight_decay else g
        v = state.get(name)
        v = d.copy() if v is None else cfg.momentum * v + d
        state[name] = v
        w -= lr * v
    return params, state
