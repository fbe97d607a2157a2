"""A small tape-based reverse-mode differentiator over numpy arrays.

Every op computes its value eagerly and appends a node holding the adjoint
closure and whatever forward values that closure needs.  ``Tape.backward``
walks the nodes once in reverse.

Adjoint rules live in module-level ``_*_grad`` helpers so a single rule can be
swapped out (the gradient checker's negative control does this).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import conv as _conv
from . import lie as _lie
from .tensor import DTYPE, ShapeError
from .unitary import NORM_EPS, normalize_rows as _normalize_rows, orient as _orient


class ContractError(RuntimeError):
    pass


class Var:
    __slots__ = ("tape", "id", "value", "name")

    def __init__(self, tape: "Tape", id: int, value: np.ndarray, name=None):
        self.tape = tape
        self.id = id
        self.value = value
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, name={self.name!r}, shape={self.value.shape})"


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: int
    backward: Callable


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[int, Var] = {}
        self._next = 0

    def _new(self, value, name=None) -> Var:
        v = Var(self, self._next, value, name)
        self._next += 1
        return v

    def leaf(self, value, name=None) -> Var:
        v = self._new(np.asarray(value, dtype=DTYPE), name)
        self._leaves[v.id] = v
        return v

    def record(self, kind: str, inputs: tuple, value, backward: Callable) -> Var:
        for x in inputs:
            if x.tape is not self:
                raise ContractError(f"{kind}: input {x!r} belongs to another tape")
        out = self._new(value)
        self.nodes.append(Node(kind, tuple(x.id for x in inputs), out.id, backward))
        return out

    def backward(self, loss: Var) -> dict:
        """Gradients of a scalar ``loss`` w.r.t. every leaf, keyed by leaf name
        (or by id for unnamed leaves)."""
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        adj = {loss.id: np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = adj.pop(node.output, None)
            if g is None:
                continue
            for i, gi in zip(node.inputs, node.backward(g)):
                if gi is None:
                    continue
                if i in adj:
                    adj[i] = adj[i] + gi
                else:
                    adj[i] = gi
        out = {}
        for i, v in self._leaves.items():
            g = adj.get(i)
            if g is None:
                g = np.zeros_like(v.value)
            out[v.name if v.name is not None else i] = g
        return out


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Var, b: Var) -> Var:
    return a.tape.record(
        "add", (a, b), a.value + b.value,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def scale(a: Var, c: float) -> Var:
    return a.tape.record("scale", (a,), a.value * c, lambda g: (g * c,))


def matmul(a: Var, b: Var) -> Var:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Var) -> Var:
    return a.tape.record(
        "transpose", (a,), np.ascontiguousarray(a.value.T), lambda g: (np.ascontiguousarray(g.T),)
    )


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return a.tape.record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(old),))


def total(a: Var) -> Var:
    shape = a.shape
    return a.tape.record(
        "sum", (a,), np.asarray(a.value.sum()), lambda g: (np.full(shape, float(g)),)
    )


def _relu_grad(g, mask):
    return g * mask


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape.record("relu", (a,), np.where(mask, a.value, 0.0), lambda g: (_relu_grad(g, mask),))


def global_avg_pool(a: Var) -> Var:
    """``(n, c, h, w) -> (n, c)`` spatial mean."""
    n, c, h, w = a.shape
    return a.tape.record(
        "avgpool", (a,), a.value.mean(axis=(2, 3)),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),),
    )


def cross_entropy(logits: Var, labels) -> Var:
    """Mean softmax cross-entropy of ``(n, classes)`` logits against integer labels."""
    labels = np.asarray(labels, dtype=np.intp)
    z = logits.value
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsum - shifted[np.arange(n), labels]))
    probs = np.exp(shifted - logsum[:, None])

    def back(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (float(g) / n),)

    return logits.tape.record("xent", (logits,), np.asarray(loss), back)


# ---------------------------------------------------------------------------
# convolution and unitary pipeline
# ---------------------------------------------------------------------------


def _im2col_grad(g, geom, n):
    return _conv.col2im(g, geom, n)


def im2col(x: Var, geom: _conv.ConvGeometry) -> Var:
    cols = _conv.im2col(x.value, geom)
    return x.tape.record("im2col", (x,), cols.mat, lambda g: (_im2col_grad(g, geom, cols.n),))


def rows_to_tensor(rows: Var, geom: _conv.ConvGeometry, n: int) -> Var:
    return rows.tape.record(
        "rows2tensor", (rows,), _conv.rows_to_tensor(rows.value, geom, n),
        lambda g: (_conv.tensor_to_rows(g),),
    )


def _normalize_grad(g, yhat, norms):
    # (I - yhat yhat^T) / ||y|| applied row by row
    dot = np.einsum("ij,ij->i", g, yhat)
    return (g - yhat * dot[:, None]) / norms[:, None]


def _normalize_grad_eps(g, y, norms):
    # d/dy [y / s], s = sqrt(|y|^2 + eps^2):  I / s - y y^T / s^3
    dot = np.einsum("ij,ij->i", g, y)
    return g / norms[:, None] - y * (dot / norms**3)[:, None]


def normalize_rows(y: Var, eps: float = NORM_EPS, guard: str = "epsilon") -> Var:
    out, norms = _normalize_rows(y.value, eps, guard)
    if guard == "error":
        return y.tape.record("normalize", (y,), out, lambda g: (_normalize_grad(g, out, norms),))
    yv = y.value
    return y.tape.record("normalize", (y,), out, lambda g: (_normalize_grad_eps(g, yv, norms),))


def _skew_grad(g, m, k):
    return _lie.skew_adjoint(m, k, g)


def lie_skew(values: Var, m: int, k: int) -> Var:
    """Packed Lie parameters to ``A = L - L^T``."""
    a = _lie.skew_from_values(m, k, values.value)
    return values.tape.record("skew", (values,), a, lambda g: (_skew_grad(g, m, k),))


def _expm_grad(g, trace):
    return _lie.expm_backward(trace, g)


def expm(a: Var, cfg: _lie.ExpmConfig = _lie.ExpmConfig(), trace: _lie.ExpmTrace | None = None) -> Var:
    """Exponential on the tape.  A precomputed ``trace`` may be passed to reuse
    an earlier exponential (weight sharing across steps)."""
    if trace is None:
        trace = _lie.expm_trace(a.value, cfg)
    return a.tape.record("expm", (a,), trace.result, lambda g: (_expm_grad(g, trace),))


def orient(u: Var, m: int, k: int) -> Var:
    n = u.shape[0]

    def back(g):
        full = np.zeros((n, n), dtype=DTYPE)
        if m > k:
            full[:, :k] = g
        else:
            full[:, :m] = g.T
        return (full,)

    return u.tape.record("orient", (u,), _orient(u.value, m, k), back)
