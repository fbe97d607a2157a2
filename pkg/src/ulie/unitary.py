"""Rectangular unitary weights cut from a square exponential.

A layer with fan-in ``m`` and fan-out ``k`` exponentiates a
``max(m, k)``-dimensional skew matrix whose Lie parameters are restricted to
the first ``min(m, k)`` columns, keeps that many columns of the result and
orients them so that row vectors of length ``m`` map to length ``k``:

* ``m > k`` (projection): ``w = U[:, :k]``; the outputs are shorter than the
  inputs, so each output row is rescaled to unit Euclidean norm.
* ``m <= k`` (isometry): ``w = U[:, :m].T``; norms are preserved exactly and no
  normalization is applied.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import counters
from .lie import ExpmConfig, LieParams, expm, lie_to_skew, packed_size
from .tensor import DTYPE, ShapeError, as_matrix

NORM_EPS = 1e-12


class Mapping(enum.IntEnum):
    FAN_IN_TO_FAN_OUT = 0
    CUSTOM = 1


class WeightCase(enum.Enum):
    PROJECT = "project"
    ISOMETRY = "isometry"


class NormalizationError(ArithmeticError):
    """A projected output row had zero norm and the guard was set to error."""


@dataclass(frozen=True)
class FilterSpec:
    """Convolution filter shape plus the choice of fan-in ``m`` and fan-out ``k``.

    The default mapping takes ``k = c_out`` and ``m = c_in * d_h * d_w``.  A
    custom mapping supplies ``m`` and ``k`` explicitly; the filter tensor is
    then the C-order flattening of ``w.T`` regrouped as ``(c_out, c_in, d_h, d_w)``.
    """

    c_out: int
    c_in: int
    d_h: int = 1
    d_w: int = 1
    mapping: Mapping = Mapping.FAN_IN_TO_FAN_OUT
    custom_m: int | None = None
    custom_k: int | None = None

    def __post_init__(self):
        if min(self.c_out, self.c_in, self.d_h, self.d_w) < 1:
            raise ShapeError(f"filter dimensions must be >= 1: {self}")
        if self.mapping == Mapping.CUSTOM:
            if self.custom_m is None or self.custom_k is None:
                raise ShapeError("custom mapping needs explicit m and k")
            if self.custom_m < 1 or self.custom_k < 1 or self.custom_m * self.custom_k != self.total:
                raise ShapeError(
                    f"custom m*k = {self.custom_m}*{self.custom_k} must equal {self.total}"
                )

    @property
    def total(self) -> int:
        return self.c_out * self.c_in * self.d_h * self.d_w

    @property
    def m(self) -> int:
        if self.mapping == Mapping.CUSTOM:
            return self.custom_m
        return self.c_in * self.d_h * self.d_w

    @property
    def k(self) -> int:
        if self.mapping == Mapping.CUSTOM:
            return self.custom_k
        return self.c_out

    @property
    def case(self) -> WeightCase:
        return WeightCase.PROJECT if self.m > self.k else WeightCase.ISOMETRY

    @property
    def lie_shape(self) -> tuple[int, int]:
        """``(ambient dimension, active columns)`` of the matching LieParams."""
        return max(self.m, self.k), min(self.m, self.k)

    @property
    def n_params(self) -> int:
        return packed_size(*self.lie_shape)

    def zero_params(self) -> LieParams:
        return LieParams(*self.lie_shape)


@dataclass(frozen=True)
class UnitaryWeight:
    w: np.ndarray  # fan_in x fan_out
    case: WeightCase
    source_dim: int

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @property
    def k(self) -> int:
        return self.w.shape[1]


def orient(u: np.ndarray, m: int, k: int) -> np.ndarray:
    """Cut the ``m x k`` fan-in to fan-out matrix out of a ``max(m, k)`` unitary."""
    if m > k:
        return np.ascontiguousarray(u[:, :k])
    return np.ascontiguousarray(u[:, :m].T)


def build_weight(lp: LieParams, spec: FilterSpec, cfg: ExpmConfig = ExpmConfig()) -> UnitaryWeight:
    if (lp.m, lp.k) != spec.lie_shape:
        raise ShapeError(
            f"LieParams (m={lp.m}, k={lp.k}) do not match filter spec {spec.lie_shape}"
        )
    u = expm(lie_to_skew(lp), cfg)
    return UnitaryWeight(orient(u, spec.m, spec.k), spec.case, lp.m)


def normalize_rows(y: np.ndarray, eps: float = NORM_EPS, guard: str = "epsilon"):
    """Divide each row by ``||[row, eps]||_2 = sqrt(||row||^2 + eps^2)``.

    Rows with norm well above ``eps`` come out unit length to rounding; an
    all-zero row stays zero.  Returns ``(out, norms)``.
    """
    counters.bump("normalize")
    sq = np.einsum("ij,ij->i", y, y)
    if guard == "error":
        if np.any(sq == 0):
            raise NormalizationError("projected output row has zero norm")
        norms = np.sqrt(sq)
    elif guard == "epsilon":
        norms = np.sqrt(sq + eps * eps)
    else:
        raise ValueError(f"unknown zero guard {guard!r}")
    return y / norms[:, None], norms


def apply_weight(
    w: UnitaryWeight,
    x,
    guard: str = "epsilon",
    eps: float = NORM_EPS,
    preserve_input_norm: bool = False,
) -> np.ndarray:
    """Map each row of ``x`` (length fan-in) through ``w``.

    Projection-case outputs are rescaled to unit norm, or to the input row's
    norm when ``preserve_input_norm`` is set.
    """
    x = as_matrix(x)
    if x.shape[1] != w.m:
        raise ShapeError(f"rows of length {x.shape[1]} do not match fan-in {w.m}")
    y = x @ w.w
    if w.case is WeightCase.ISOMETRY:
        return y
    y, _ = normalize_rows(y, eps, guard)
    if preserve_input_norm:
        y *= np.sqrt(np.einsum("ij,ij->i", x, x))[:, None]
    return y


def reshape_to_filters(w, spec: FilterSpec) -> np.ndarray:
    mat = w.w if isinstance(w, UnitaryWeight) else np.asarray(w, dtype=DTYPE)
    if mat.size != spec.total or mat.shape != (spec.m, spec.k):
        raise ShapeError(f"weight of shape {mat.shape} does not fit filter spec {spec}")
    return np.ascontiguousarray(mat.T).reshape(spec.c_out, spec.c_in, spec.d_h, spec.d_w)


def flatten_filters(filters: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Inverse of :func:`reshape_to_filters`."""
    filters = np.asarray(filters, dtype=DTYPE)
    if filters.shape != (spec.c_out, spec.c_in, spec.d_h, spec.d_w):
        raise ShapeError(f"filters of shape {filters.shape} do not fit filter spec {spec}")
    return np.ascontiguousarray(filters.reshape(spec.k, spec.m).T)
