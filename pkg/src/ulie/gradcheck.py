"""Reverse-mode versus central finite differences, parameter by parameter."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tape

# Gradients smaller than this are compared in absolute terms; below it the
# finite-difference cancellation noise (~eps * |loss| / h) dominates.
SCALE_FLOOR = 1e-4


@dataclass
class GradCheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric), SCALE_FLOOR)
        return abs(self.analytic - self.numeric) / denom


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not e.rel_error < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}: {len(self.entries)} parameters, max rel error "
                f"{self.max_error:.3e} (tol {self.tolerance:g}), {len(self.failures)} failures")


def loss_value(model, x, y) -> float:
    tape = Tape()
    return float(model.loss(tape, x, y).value)


def grad_check(model, x, y, tolerance: float = 1e-5, h: float = 1e-6, max_params: int = 10_000):
    """Compare every trainable parameter's reverse-mode gradient against
    ``(L(p + h) - L(p - h)) / 2h``."""
    params = model.parameters()
    n = sum(p.size for p in params.values())
    if n > max_params:
        raise ValueError(f"{n} parameters exceed the finite-difference budget of {max_params}")
    tape = Tape()
    grads = tape.backward(model.loss(tape, x, y))
    report = GradCheckReport(tolerance)
    for name, p in params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_value(model, x, y)
            flat[i] = old - h
            down = loss_value(model, x, y)
            flat[i] = old
            report.entries.append(GradCheckEntry(name, i, float(g[i]), (up - down) / (2 * h)))
    return report
