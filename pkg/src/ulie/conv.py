"""2-D cross-correlation, both as a direct nested loop and as a product with the
Toeplitz (im2col) arrangement of the input.

Patches are flattened in ``(c_in, d_h, d_w)`` order, the same order
:func:`ulie.unitary.flatten_filters` uses, so ``im2col(x) @ w`` is the
convolution with ``reshape_to_filters(w)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .lie import ExpmConfig, LieParams
from .tensor import DTYPE, ShapeError, as_tensor4
from .unitary import FilterSpec, Mapping, UnitaryWeight, apply_weight, build_weight, reshape_to_filters


@dataclass(frozen=True)
class ConvGeometry:
    c_in: int
    h: int
    w: int
    d_h: int
    d_w: int
    stride: int = 1
    padding: int = 0
    c_out: int = 1

    def __post_init__(self):
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"bad stride/padding in {self}")
        if self.h_out < 1 or self.w_out < 1:
            raise ShapeError(f"kernel does not fit the padded input: {self}")

    @classmethod
    def for_spec(cls, spec: FilterSpec, h: int, w: int, stride: int = 1, padding: int = 0):
        return cls(spec.c_in, h, w, spec.d_h, spec.d_w, stride, padding, spec.c_out)

    @property
    def h_out(self) -> int:
        return (self.h + 2 * self.padding - self.d_h) // self.stride + 1

    @property
    def w_out(self) -> int:
        return (self.w + 2 * self.padding - self.d_w) // self.stride + 1

    @property
    def patch_size(self) -> int:
        return self.c_in * self.d_h * self.d_w

    def check_input(self, image: np.ndarray) -> None:
        if image.shape[1:] != (self.c_in, self.h, self.w):
            raise ShapeError(
                f"input of shape {image.shape} does not match geometry "
                f"(c_in={self.c_in}, h={self.h}, w={self.w})"
            )


@dataclass(frozen=True)
class ToeplitzMatrix:
    mat: np.ndarray  # (n * h_out * w_out, c_in * d_h * d_w)
    geometry: ConvGeometry
    n: int


def _pad(image: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return image
    return np.pad(image, ((0, 0), (0, 0), (p, p), (p, p)))


def conv_direct(image, filters, g: ConvGeometry) -> np.ndarray:
    """Reference cross-correlation: ``O(i, j) = sum_m sum_n I(i + m, j + n) F(m, n)``
    summed over input channels, one output pixel at a time.
    """
    image = as_tensor4(image)
    filters = as_tensor4(filters)
    g.check_input(image)
    if filters.shape[1:] != (g.c_in, g.d_h, g.d_w):
        raise ShapeError(f"filters of shape {filters.shape} do not match geometry {g}")
    n, c_out = image.shape[0], filters.shape[0]
    x = _pad(image, g.padding)
    out = np.zeros((n, c_out, g.h_out, g.w_out), dtype=DTYPE)
    for b in range(n):
        for o in range(c_out):
            for i in range(g.h_out):
                for j in range(g.w_out):
                    acc = 0.0
                    r0, c0 = i * g.stride, j * g.stride
                    for c in range(g.c_in):
                        for p in range(g.d_h):
                            for q in range(g.d_w):
                                acc += x[b, c, r0 + p, c0 + q] * filters[o, c, p, q]
                    out[b, o, i, j] = acc
    return out


def im2col(image, g: ConvGeometry) -> ToeplitzMatrix:
    image = as_tensor4(image)
    g.check_input(image)
    x = _pad(image, g.padding)
    win = sliding_window_view(x, (g.d_h, g.d_w), axis=(2, 3))
    win = win[:, :, : g.h_out * g.stride : g.stride, : g.w_out * g.stride : g.stride]
    # (n, c, ho, wo, dh, dw) -> (n, ho, wo, c, dh, dw)
    mat = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, g.patch_size)
    return ToeplitzMatrix(mat, g, image.shape[0])


def col2im(cols: np.ndarray, g: ConvGeometry, n: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the image."""
    s = g.stride
    cols = cols.reshape(n, g.h_out, g.w_out, g.c_in, g.d_h, g.d_w)
    hp, wp = g.h + 2 * g.padding, g.w + 2 * g.padding
    out = np.zeros((n, g.c_in, hp, wp), dtype=DTYPE)
    for p in range(g.d_h):
        for q in range(g.d_w):
            out[:, :, p : p + s * g.h_out : s, q : q + s * g.w_out : s] += cols[
                :, :, :, :, p, q
            ].transpose(0, 3, 1, 2)
    if g.padding:
        pad = g.padding
        out = out[:, :, pad : pad + g.h, pad : pad + g.w]
    return np.ascontiguousarray(out)


def rows_to_tensor(rows: np.ndarray, g: ConvGeometry, n: int) -> np.ndarray:
    """``(n * h_out * w_out, c_out)`` rows back to ``(n, c_out, h_out, w_out)``."""
    c_out = rows.shape[1]
    return np.ascontiguousarray(rows.reshape(n, g.h_out, g.w_out, c_out).transpose(0, 3, 1, 2))


def tensor_to_rows(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t.transpose(0, 2, 3, 1)).reshape(-1, t.shape[1])


def conv_toeplitz(image, filters, g: ConvGeometry) -> np.ndarray:
    filters = as_tensor4(filters)
    cols = im2col(image, g)
    w = filters.reshape(filters.shape[0], -1).T
    return rows_to_tensor(cols.mat @ w, g, cols.n)


def conv_weight(w: UnitaryWeight, spec: FilterSpec) -> UnitaryWeight:
    """Weight acting on im2col rows; differs from ``w`` only for custom mappings."""
    if spec.mapping == Mapping.FAN_IN_TO_FAN_OUT:
        return w
    f = reshape_to_filters(w, spec)
    return UnitaryWeight(np.ascontiguousarray(f.reshape(spec.c_out, -1).T), w.case, w.source_dim)


def unitary_conv_apply(image, w: UnitaryWeight, spec: FilterSpec, g: ConvGeometry, **kw) -> np.ndarray:
    if (spec.c_in, spec.d_h, spec.d_w) != (g.c_in, g.d_h, g.d_w):
        raise ShapeError(f"filter spec {spec} inconsistent with geometry {g}")
    cols = im2col(image, g)
    rows = apply_weight(conv_weight(w, spec), cols.mat, **kw)
    return rows_to_tensor(rows, g, cols.n)


def unitary_conv_forward(
    image, lp: LieParams, spec: FilterSpec, g: ConvGeometry, cfg: ExpmConfig = ExpmConfig(), **kw
) -> np.ndarray:
    """im2col, unitary weight (with row normalization when projecting), reshape."""
    return unitary_conv_apply(image, build_weight(lp, spec, cfg), spec, g, **kw)
