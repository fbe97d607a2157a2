"""Lie parameters, the skew-symmetric algebra element, and the truncated-Taylor
matrix exponential together with its exact reverse-mode adjoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import counters
from .tensor import DTYPE, ShapeError


class ExpmOverflowError(OverflowError):
    """The scaling step needed more squarings than allowed."""


def packed_size(m: int, k: int) -> int:
    """Number of free strictly-lower-triangular entries in the first ``k`` columns."""
    return k * m - k * (k + 1) // 2


@lru_cache(maxsize=256)
def packed_indices(m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the packed entries, column by column."""
    rows, cols = [], []
    for j in range(k):
        rows.extend(range(j + 1, m))
        cols.extend([j] * (m - j - 1))
    r = np.array(rows, dtype=np.intp)
    c = np.array(cols, dtype=np.intp)
    r.flags.writeable = False
    c.flags.writeable = False
    return r, c


@dataclass
class LieParams:
    """Trainable values of a strictly lower-triangular ``m x m`` matrix whose
    columns past ``k`` are zero.

    ``values`` is packed column by column: column 0 rows 1..m-1, then column 1
    rows 2..m-1, and so on.
    """

    m: int
    k: int
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 1 <= self.k <= self.m:
            raise ShapeError(f"need 1 <= k <= m, got m={self.m}, k={self.k}")
        n = packed_size(self.m, self.k)
        if self.values is None:
            self.values = np.zeros(n, dtype=DTYPE)
        else:
            self.values = np.asarray(self.values, dtype=DTYPE).reshape(-1)
        if self.values.size != n:
            raise ShapeError(
                f"LieParams(m={self.m}, k={self.k}) needs {n} values, got {self.values.size}"
            )

    @classmethod
    def random(cls, rng: np.random.Generator, m: int, k: int, low=-1.0, high=1.0) -> "LieParams":
        return cls(m, k, rng.uniform(low, high, size=packed_size(m, k)))

    @property
    def size(self) -> int:
        return self.values.size

    def copy(self) -> "LieParams":
        return LieParams(self.m, self.k, self.values.copy())


@dataclass(frozen=True)
class SkewSymmetric:
    m: int
    matrix: np.ndarray


@dataclass(frozen=True)
class ExpmConfig:
    taylor_degree: int = 18
    scale_threshold: float = 1.0
    max_squarings: int = 32

    def __post_init__(self):
        if self.taylor_degree < 1:
            raise ValueError("taylor_degree must be >= 1")
        if not self.scale_threshold > 0:
            raise ValueError("scale_threshold must be positive")

    @classmethod
    def strict(cls, taylor_degree: int = 18) -> "ExpmConfig":
        """Plain truncated series with scaling-and-squaring switched off."""
        return cls(taylor_degree=taylor_degree, scale_threshold=math.inf)


def unpack(lp: LieParams) -> np.ndarray:
    out = np.zeros((lp.m, lp.m), dtype=DTYPE)
    r, c = packed_indices(lp.m, lp.k)
    out[r, c] = lp.values
    return out


def skew_from_values(m: int, k: int, values: np.ndarray) -> np.ndarray:
    low = unpack(LieParams(m, k, values))
    return low - low.T


def skew_adjoint(m: int, k: int, grad_a: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. ``A = L - L^T`` back onto the packed values."""
    r, c = packed_indices(m, k)
    g = grad_a - grad_a.T
    return np.ascontiguousarray(g[r, c])


def lie_to_skew(lp: LieParams) -> SkewSymmetric:
    a = skew_from_values(lp.m, lp.k, lp.values)
    assert not np.any(a + a.T), "L - L^T must be exactly skew-symmetric"
    return SkewSymmetric(lp.m, a)


# ---------------------------------------------------------------------------
# exponential
# ---------------------------------------------------------------------------


def _block_size(degree: int) -> int:
    # Paterson-Stockmeyer cost: (s - 1) powers plus degree // s Horner steps.
    return min(range(1, degree + 1), key=lambda s: (s - 1 + degree // s, s))


def _squarings_needed(a: np.ndarray, cfg: ExpmConfig) -> int:
    norm1 = float(np.abs(a).sum(axis=0).max()) if a.size else 0.0
    if not math.isfinite(norm1):
        raise ExpmOverflowError("matrix has non-finite entries")
    if norm1 <= cfg.scale_threshold:
        return 0
    s = max(0, math.ceil(math.log2(norm1 / cfg.scale_threshold)))
    while math.ldexp(norm1, -s) > cfg.scale_threshold:
        s += 1
    if s > cfg.max_squarings:
        raise ExpmOverflowError(
            f"1-norm {norm1:.3g} needs {s} squarings, limit is {cfg.max_squarings}"
        )
    return s


@dataclass
class ExpmTrace:
    """Forward intermediates of one exponential, kept for the adjoint."""

    squarings: int
    block: int
    coeffs: np.ndarray
    powers: list  # powers[i] = X**i for i = 0..block, X the scaled input
    horner: list  # horner[j] = Horner accumulator after absorbing block j
    squares: list  # squares[t] = polynomial result squared t times
    result: np.ndarray


def _block_poly(trace_powers, coeffs, start, stop):
    acc = coeffs[start] * trace_powers[0]
    for i in range(start + 1, stop):
        acc = acc + coeffs[i] * trace_powers[i - start]
    return acc


def expm_trace(a, cfg: ExpmConfig = ExpmConfig()) -> ExpmTrace:
    a = a.matrix if isinstance(a, SkewSymmetric) else np.asarray(a, dtype=DTYPE)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expm needs a square matrix, got shape {a.shape}")
    counters.bump("expm")
    n = a.shape[0]
    d = cfg.taylor_degree
    sq = _squarings_needed(a, cfg)
    x = np.ldexp(a, -sq) if sq else a.copy()
    coeffs = np.array([1.0 / math.factorial(i) for i in range(d + 1)], dtype=DTYPE)

    s = _block_size(d)
    powers = [np.eye(n, dtype=DTYPE), x]
    for _ in range(2, s + 1):
        powers.append(powers[-1] @ x)

    q = d // s
    r = _block_poly(powers, coeffs, q * s, d + 1)
    horner = [r]
    for j in range(q - 1, -1, -1):
        r = r @ powers[s] + _block_poly(powers, coeffs, j * s, (j + 1) * s)
        horner.append(r)

    squares = [r]
    for _ in range(sq):
        r = r @ r
        squares.append(r)
    return ExpmTrace(sq, s, coeffs, powers, horner, squares, r)


def expm(a, cfg: ExpmConfig = ExpmConfig()) -> np.ndarray:
    """Degree-``cfg.taylor_degree`` Taylor exponential, grouped Paterson-Stockmeyer
    style, wrapped in scaling and squaring when ``||a||_1`` exceeds the threshold.
    """
    return expm_trace(a, cfg).result


def expm_backward(trace: ExpmTrace, upstream: np.ndarray) -> np.ndarray:
    """Reverse the exact multiplication sequence recorded in ``trace``."""
    g = np.asarray(upstream, dtype=DTYPE)
    if g.shape != trace.result.shape:
        raise ShapeError(f"upstream shape {g.shape} != result shape {trace.result.shape}")
    for t in range(trace.squarings - 1, -1, -1):
        e = trace.squares[t]
        g = g @ e.T + e.T @ g

    s = trace.block
    powers = trace.powers
    c = trace.coeffs
    d = c.size - 1
    q = d // s
    grad_pow = [np.zeros_like(p) for p in powers]
    # horner[i] is the accumulator holding blocks j >= q - i
    for i in range(q, 0, -1):
        j = q - i
        for l in range(j * s + 1, (j + 1) * s):
            grad_pow[l - j * s] += c[l] * g
        prev = trace.horner[i - 1]
        grad_pow[s] += prev.T @ g
        g = g @ powers[s].T
    for l in range(q * s + 1, d + 1):
        grad_pow[l - q * s] += c[l] * g

    for i in range(s, 1, -1):
        grad_pow[i - 1] += grad_pow[i] @ powers[1].T
        grad_pow[1] += powers[i - 1].T @ grad_pow[i]
    gx = grad_pow[1]
    return np.ldexp(gx, -trace.squarings) if trace.squarings else gx


def expm_grad(a, upstream: np.ndarray, cfg: ExpmConfig = ExpmConfig()) -> np.ndarray:
    """Gradient of ``sum(upstream * expm(a))`` with respect to ``a``."""
    return expm_backward(expm_trace(a, cfg), upstream)
