"""Reference implementations shared by several test modules.

They deliberately avoid any code path of the package under test."""
import math

import numpy as np


def taylor_oracle(a, degree=30, threshold=0.5):
    """Scaling and squaring around a plainly summed Taylor series."""
    a = np.asarray(a, dtype=float)
    norm = np.abs(a).sum(axis=0).max()
    s = max(0, math.ceil(math.log2(norm / threshold))) if norm > threshold else 0
    x = a / 2.0**s
    term = np.eye(len(a))
    total = term.copy()
    for n in range(1, degree + 1):
        term = term @ x / n
        total = total + term
    for _ in range(s):
        total = total @ total
    return total


def random_skew(rng, m, scale):
    a = rng.uniform(-scale, scale, size=(m, m))
    return np.tril(a, -1) - np.tril(a, -1).T
