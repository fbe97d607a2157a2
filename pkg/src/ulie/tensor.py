"""Dense float64 storage and the few linear-algebra primitives the rest of the
package builds on.

Matrices are plain 2-D ``numpy.ndarray`` objects in C (row-major) order and
4-D activations use ``(n, c, h, w)`` layout.  The row-major layout is part of
the on-disk contract in :mod:`ulie.store`.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when array shapes are incompatible with an operation."""


def as_matrix(a) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=DTYPE)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    return m


def as_tensor4(a) -> np.ndarray:
    t = np.ascontiguousarray(a, dtype=DTYPE)
    if t.ndim != 4:
        raise ShapeError(f"expected an (n, c, h, w) tensor, got shape {t.shape}")
    return t


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` with a shape check that names both operands."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(a).T)


def l2_norm(v) -> float:
    v = np.asarray(v, dtype=DTYPE).ravel()
    if v.size == 0:
        return 0.0
    return float(np.sqrt(np.dot(v, v)))


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the same seed always yields the same stream."""
    return np.random.default_rng(np.uint64(seed))


def random_gaussian(rng: np.random.Generator, rows: int, cols: int, std: float) -> np.ndarray:
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    return rng.normal(0.0, std, size=(rows, cols)).astype(DTYPE, copy=False)
