"""Binary model files.

Layout (all integers and floats little-endian)::

    magic      4 bytes   b"ULIE"
    version    u16       1
    mode       u8        0 = lie-packed, 1 = dense-cached
    n_layers   u32
    per layer:
        c_out, c_in, d_h, d_w, mapping, stride, padding   7 x u32
        payload_len                                      u64, number of f64 values
        payload                                          payload_len x f64

``mapping`` low byte: 0 fan-in to fan-out, 1 custom (fan-out ``k`` stored in
the upper 24 bits), 2 dense classifier head.  Convolution payloads are the
packed Lie parameters (mode 0) or the row-major ``m x k`` cached weight
(mode 1).  The head payload is its row-major ``(in, out)`` weight followed by
the bias, identical in both modes.  Every conv layer is followed by ReLU and
the head by a global average pool, as in :class:`ulie.model.ConvNet`.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .lie import LieParams
from .model import ConvNet, DenseHead, UnitaryConv
from .unitary import FilterSpec, Mapping, UnitaryWeight

MAGIC = b"ULIE"
VERSION = 1
MODE_LIE = 0
MODE_DENSE = 1
MODES = {"lie": MODE_LIE, "dense": MODE_DENSE}

_HEADER = struct.Struct("<4sHBI")
_LAYER = struct.Struct("<7IQ")
_MAP_DEFAULT, _MAP_CUSTOM, _MAP_HEAD = 0, 1, 2
_F64 = np.dtype("<f8")


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class TruncatedError(ModelFormatError):
    pass


def _mapping_id(spec: FilterSpec) -> int:
    if spec.mapping == Mapping.CUSTOM:
        if spec.custom_k >= 1 << 24:
            raise ModelFormatError(f"custom fan-out {spec.custom_k} does not fit in 24 bits")
        return _MAP_CUSTOM | (spec.custom_k << 8)
    return _MAP_DEFAULT


def _spec_from_header(c_out, c_in, d_h, d_w, mapping) -> FilterSpec:
    kind = mapping & 0xFF
    if kind == _MAP_DEFAULT:
        return FilterSpec(c_out, c_in, d_h, d_w)
    if kind == _MAP_CUSTOM:
        k = mapping >> 8
        total = c_out * c_in * d_h * d_w
        if k == 0 or total % k:
            raise ModelFormatError(f"custom mapping fan-out {k} does not divide {total}")
        return FilterSpec(c_out, c_in, d_h, d_w, Mapping.CUSTOM, total // k, k)
    raise ModelFormatError(f"unknown mapping id {mapping}")


def cache_weights(model: ConvNet) -> ConvNet:
    """Exponentiate every layer once; cached models pass through unchanged."""
    return model if model.cached else model.cache()


def save(model: ConvNet, mode: str | int = "lie") -> bytes:
    mode = MODES.get(mode, mode)
    if mode not in (MODE_LIE, MODE_DENSE):
        raise ValueError(f"unknown mode {mode!r}")
    if not model.relu:
        raise ModelFormatError("the file format assumes ReLU after every conv layer")
    if not all(isinstance(c, UnitaryConv) for c in model.convs):
        raise ModelFormatError("only unitary conv layers can be stored")
    if mode == MODE_LIE and not model.trainable:
        raise ModelFormatError("a cached model has no Lie parameters to save")
    if mode == MODE_DENSE:
        model = cache_weights(model)

    n_layers = len(model.convs) + (model.head is not None)
    parts = [_HEADER.pack(MAGIC, VERSION, mode, n_layers)]
    for c in model.convs:
        s = c.spec
        payload = c.lie.values if mode == MODE_LIE else c.weight.w
        payload = np.ascontiguousarray(payload, dtype=_F64).ravel()
        parts.append(_LAYER.pack(s.c_out, s.c_in, s.d_h, s.d_w, _mapping_id(s), c.stride, c.padding, payload.size))
        parts.append(payload.tobytes())
    if model.head is not None:
        n_in, n_out = model.head.weight.shape
        payload = np.concatenate([model.head.weight.ravel(), model.head.bias.ravel()]).astype(_F64)
        parts.append(_LAYER.pack(n_out, n_in, 1, 1, _MAP_HEAD, 1, 0, payload.size))
        parts.append(payload.tobytes())
    return b"".join(parts)


def load(data: bytes) -> ConvNet:
    data = memoryview(bytes(data))
    if bytes(data[:4]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedError("file shorter than its header")
    _, version, mode, n_layers = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise VersionError(f"unsupported version {version}, expected {VERSION}")
    if mode not in (MODE_LIE, MODE_DENSE):
        raise ModelFormatError(f"unknown mode byte {mode}")

    off = _HEADER.size
    convs, head = [], None
    for i in range(n_layers):
        if off + _LAYER.size > len(data):
            raise TruncatedError(f"layer {i}: header truncated")
        c_out, c_in, d_h, d_w, mapping, stride, pad, n = _LAYER.unpack_from(data, off)
        off += _LAYER.size
        if off + 8 * n > len(data):
            raise TruncatedError(f"layer {i}: payload of {n} values truncated")
        payload = np.frombuffer(data, dtype=_F64, count=n, offset=off).astype(np.float64)
        off += 8 * n
        if head is not None:
            raise ModelFormatError("the classifier head must be the last layer")
        if mapping == _MAP_HEAD:
            if n != c_in * c_out + c_out:
                raise ModelFormatError(f"head payload has {n} values, expected {c_in * c_out + c_out}")
            head = DenseHead(payload[: c_in * c_out].reshape(c_in, c_out).copy(), payload[c_in * c_out :].copy())
            continue
        spec = _spec_from_header(c_out, c_in, d_h, d_w, mapping)
        if mode == MODE_LIE:
            m, k = spec.lie_shape
            if n != spec.n_params:
                raise ModelFormatError(f"layer {i}: {n} Lie values, expected {spec.n_params}")
            convs.append(UnitaryConv(spec, stride, pad, LieParams(m, k, payload)))
        else:
            if n != spec.total:
                raise ModelFormatError(f"layer {i}: {n} weight values, expected {spec.total}")
            w = UnitaryWeight(payload.reshape(spec.m, spec.k), spec.case, max(spec.m, spec.k))
            convs.append(UnitaryConv(spec, stride, pad, None, w))
    if off != len(data):
        raise ModelFormatError(f"{len(data) - off} trailing bytes")
    return ConvNet(convs, head)


def save_file(model: ConvNet, path, mode: str | int = "lie") -> int:
    blob = save(model, mode)
    try:
        Path(path).write_bytes(blob)
    except OSError as e:
        raise OSError(f"cannot write model file {path}: {e}") from e
    return len(blob)


def load_file(path) -> ConvNet:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise OSError(f"cannot read model file {path}: {e}") from e
    return load(blob)
