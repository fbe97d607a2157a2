"""Unitary convolutional networks: layers, the reference ``toy6`` architecture,
and weight caching for inference.

A network is a stack of unitary convolutions (each followed by ReLU), a
global average pool, and an ordinary dense classifier head.  Layers start in
*lie* mode (trainable packed Lie parameters, exponentiated on every forward
pass) and can be frozen into *dense* mode (the exponentiated, truncated,
oriented weight is stored and no exponential is ever evaluated again).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .conv import ConvGeometry, im2col, rows_to_tensor, unitary_conv_apply
from .lie import ExpmConfig, ExpmTrace, LieParams, expm_trace
from .tensor import DTYPE, ShapeError
from .unitary import FilterSpec, Mapping, UnitaryWeight, WeightCase, build_weight


@dataclass
class UnitaryConv:
    spec: FilterSpec
    stride: int = 1
    padding: int = 0
    lie: LieParams | None = None
    weight: UnitaryWeight | None = None
    cfg: ExpmConfig = field(default_factory=ExpmConfig)

    def __post_init__(self):
        if self.lie is None and self.weight is None:
            self.lie = self.spec.zero_params()
        if self.lie is not None and (self.lie.m, self.lie.k) != self.spec.lie_shape:
            raise ShapeError(f"LieParams {(self.lie.m, self.lie.k)} do not fit {self.spec}")
        self._trace: ExpmTrace | None = None

    @property
    def cached(self) -> bool:
        return self.lie is None

    @property
    def param(self) -> np.ndarray | None:
        return None if self.cached else self.lie.values

    param_suffix = "lie"

    def geometry(self, h: int, w: int) -> ConvGeometry:
        return ConvGeometry.for_spec(self.spec, h, w, self.stride, self.padding)

    def current_weight(self) -> UnitaryWeight:
        if self.cached:
            return self.weight
        return build_weight(self.lie, self.spec, self.cfg)

    def cache(self) -> "UnitaryConv":
        if self.cached:
            return self
        return UnitaryConv(self.spec, self.stride, self.padding, None, self.current_weight(), self.cfg)

    def infer(self, x: np.ndarray) -> np.ndarray:
        g = self.geometry(x.shape[2], x.shape[3])
        return unitary_conv_apply(x, self.current_weight(), self.spec, g)

    def forward(self, x: ag.Var, values: ag.Var, reuse_exp: bool = False) -> ag.Var:
        """Differentiable forward pass from packed Lie parameters.

        With ``reuse_exp`` the exponential from the previous call is reused,
        including its (now stale) adjoint.
        """
        if self.cached:
            raise RuntimeError("cached layers are inference-only")
        spec = self.spec
        m_amb, k_act = spec.lie_shape
        a = ag.lie_skew(values, m_amb, k_act)
        if not reuse_exp or self._trace is None:
            self._trace = expm_trace(a.value, self.cfg)
        u = ag.expm(a, self.cfg, trace=self._trace)
        w = ag.orient(u, spec.m, spec.k)
        if spec.mapping == Mapping.CUSTOM:
            w = ag.transpose(ag.reshape(ag.transpose(w), (spec.c_out, -1)))
        g = self.geometry(x.shape[2], x.shape[3])
        y = ag.matmul(ag.im2col(x, g), w)
        if spec.case is WeightCase.PROJECT:
            y = ag.normalize_rows(y)
        return ag.rows_to_tensor(y, g, x.shape[0])


@dataclass
class FreeConv:
    """Unconstrained convolution with an ``m x k`` weight; the baseline the
    unitary layers are compared against."""

    spec: FilterSpec
    stride: int = 1
    padding: int = 0
    weight: np.ndarray | None = None

    param_suffix = "weight"
    cached = False

    @classmethod
    def gaussian(cls, rng, spec: FilterSpec, stride=1, padding=0, std: float | None = None):
        """``std`` defaults to ``1 / sqrt(fan_in)``."""
        std = 1.0 / np.sqrt(spec.m) if std is None else std
        return cls(spec, stride, padding, rng.normal(0.0, std, size=(spec.m, spec.k)))

    @property
    def param(self) -> np.ndarray:
        return self.weight

    def cache(self) -> "FreeConv":
        return self

    def geometry(self, h: int, w: int) -> ConvGeometry:
        return ConvGeometry.for_spec(self.spec, h, w, self.stride, self.padding)

    def infer(self, x: np.ndarray) -> np.ndarray:
        g = self.geometry(x.shape[2], x.shape[3])
        return rows_to_tensor(im2col(x, g).mat @ self.weight, g, x.shape[0])

    def forward(self, x: ag.Var, weight: ag.Var, reuse_exp: bool = False) -> ag.Var:
        g = self.geometry(x.shape[2], x.shape[3])
        return ag.rows_to_tensor(ag.matmul(ag.im2col(x, g), weight), g, x.shape[0])


@dataclass
class DenseHead:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator | None, n_in: int, n_out: int) -> "DenseHead":
        """Gaussian fan-in init, or all zeros when ``rng`` is None."""
        if rng is None:
            return cls(np.zeros((n_in, n_out)), np.zeros(n_out))
        return cls(rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)), np.zeros(n_out))

    def infer(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight + self.bias


@dataclass
class ConvNet:
    convs: list
    head: DenseHead | None = None
    relu: bool = True

    @property
    def cached(self) -> bool:
        return all(c.cached for c in self.convs)

    @property
    def trainable(self) -> bool:
        return not any(c.cached for c in self.convs)

    def parameters(self) -> dict:
        """Trainable arrays keyed by name; updated in place by the optimizer."""
        params = {}
        for i, c in enumerate(self.convs):
            if c.param is not None:
                params[f"conv{i}.{c.param_suffix}"] = c.param
        if self.head is not None:
            params["head.weight"] = self.head.weight
            params["head.bias"] = self.head.bias
        return params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def features(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        for c in self.convs:
            x = c.infer(x)
            if self.relu:
                x = np.maximum(x, 0.0)
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        f = self.features(x)
        if self.head is None:
            return f.mean(axis=(2, 3))
        return self.head.infer(f.mean(axis=(2, 3)))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).argmax(axis=1)

    def loss(self, tape: ag.Tape, x: np.ndarray, labels, reuse_exp: bool = False) -> ag.Var:
        """Record the mean cross-entropy of the batch on ``tape``.

        Parameter leaves are named as in :meth:`parameters`.
        """
        if not self.trainable:
            raise RuntimeError("cached layers are inference-only")
        params = {name: tape.leaf(v, name) for name, v in self.parameters().items()}
        h = tape.leaf(np.asarray(x, dtype=DTYPE), "input")
        for i, c in enumerate(self.convs):
            h = c.forward(h, params[f"conv{i}.{c.param_suffix}"], reuse_exp)
            if self.relu:
                h = ag.relu(h)
        h = ag.global_avg_pool(h)
        if self.head is not None:
            h = ag.add(ag.matmul(h, params["head.weight"]), params["head.bias"])
        return ag.cross_entropy(h, labels)

    def cache(self) -> "ConvNet":
        """Inference copy with every exponential evaluated once and frozen."""
        head = None
        if self.head is not None:
            head = DenseHead(self.head.weight.copy(), self.head.bias.copy())
        return ConvNet([c.cache() for c in self.convs], head, self.relu)


# (c_out, kernel, stride, padding) per layer; input channels chain through
TOY6_LAYERS = (
    (4, 3, 1, 1),   # m=9   -> 4   project
    (8, 3, 2, 1),   # m=36  -> 8   project, halves spatial size
    (8, 1, 1, 0),   # 8 -> 8       square
    (16, 3, 2, 1),  # m=72  -> 16  project, halves spatial size
    (16, 1, 1, 0),  # 16 -> 16     square
    (32, 1, 1, 0),  # 16 -> 32     isometry (embedding)
)


def toy6(
    n_classes: int = 10,
    in_channels: int = 1,
    seed: int = 0,
    init_scale: float = 1.0,
    cfg: ExpmConfig = ExpmConfig(),
) -> ConvNet:
    """Six unitary conv layers (three projecting, two square, one embedding),
    ReLU after each, global average pool, dense head to ``n_classes``.

    The head starts at zero so the untrained net predicts at chance level.
    """
    rng = np.random.default_rng(seed)
    convs = []
    c_in = in_channels
    for c_out, kern, stride, pad in TOY6_LAYERS:
        spec = FilterSpec(c_out, c_in, kern, kern)
        lp = LieParams.random(rng, *spec.lie_shape, low=-init_scale, high=init_scale)
        convs.append(UnitaryConv(spec, stride, pad, lp, cfg=cfg))
        c_in = c_out
    return ConvNet(convs, DenseHead.init(None, c_in, n_classes))


def toy6_free(n_classes: int = 10, in_channels: int = 1, seed: int = 0) -> ConvNet:
    """``toy6`` shapes with unconstrained Gaussian-initialized filters."""
    rng = np.random.default_rng(seed)
    convs = []
    c_in = in_channels
    for c_out, kern, stride, pad in TOY6_LAYERS:
        convs.append(FreeConv.gaussian(rng, FilterSpec(c_out, c_in, kern, kern), stride, pad))
        c_in = c_out
    return ConvNet(convs, DenseHead.init(None, c_in, n_classes))
