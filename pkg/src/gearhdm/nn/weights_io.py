"""GWT1 weight files: self-describing, bit-exact round trip.

Layout (all integers little-endian): magic "GWT1", u32 layer count, then
per layer a u8 kind tag, u8 config length + u32 config values, u8 array
count + per array (u8 ndim, u32 dims, f32 data). Trainable parameters
come first, followed by running statistics.
"""

from __future__ import annotations

import io

import numpy as np

from ..gearsim import FormatError
from . import layers as L

GWT1_MAGIC = b"GWT1"

_KIND_TAGS = {
    "conv": 1, "tconv": 2, "maxpool": 3, "relu": 4, "elu": 5,
    "batchnorm": 6, "dense": 7, "flatten": 8, "reshape": 9, "croppad": 10,
    "relupool": 11, "elupool": 12,
}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def _build_layer(kind: str, config: tuple) -> L.Layer:
    rng = np.random.default_rng(0)  # values are overwritten by the file
    if kind == "conv":
        k, ci, co, s, p = config
        return L.Conv2D(k, ci, co, s, p, rng=rng)
    if kind == "tconv":
        k, ci, co, s, p = config
        return L.TransposedConv2D(k, ci, co, s, p, rng=rng)
    if kind == "maxpool":
        return L.MaxPool2D(*config)
    if kind == "relupool":
        return L.ReLUMaxPool(*config)
    if kind == "elupool":
        return L.ELUMaxPool(*config)
    if kind == "relu":
        return L.ReLU()
    if kind == "elu":
        return L.ELU()
    if kind == "batchnorm":
        return L.BatchNorm(*config)
    if kind == "dense":
        return L.Dense(*config, rng=rng)
    if kind == "flatten":
        return L.Flatten()
    if kind == "reshape":
        return L.Reshape(*config)
    if kind == "croppad":
        return L.CenterCropPad(*config)
    raise FormatError(f"unknown layer kind {kind!r}")


def _write_array(buf, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    buf.write(np.uint8(arr.ndim).tobytes())
    buf.write(np.asarray(arr.shape, dtype="<u4").tobytes())
    buf.write(arr.astype("<f4").tobytes())


def save_weights(network: L.Network, path) -> None:
    buf = io.BytesIO()
    buf.write(GWT1_MAGIC)
    buf.write(np.uint32(len(network.layers)).tobytes())
    for layer in network.layers:
        buf.write(np.uint8(_KIND_TAGS[layer.kind]).tobytes())
        config = layer.config()
        buf.write(np.uint8(len(config)).tobytes())
        buf.write(np.asarray(config, dtype="<u4").tobytes())
        arrays = [p.value for p in layer.params()] + layer.state_arrays()
        buf.write(np.uint8(len(arrays)).tobytes())
        for arr in arrays:
            _write_array(buf, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_network(path) -> L.Network:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != GWT1_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0 (want GWT1)")
    off = 4
    try:
        n_layers = int(np.frombuffer(data, "<u4", 1, off)[0]); off += 4
        layers = []
        for _ in range(n_layers):
            tag = data[off]; off += 1
            kind = _TAG_KINDS.get(tag)
            if kind is None:
                raise FormatError(f"{path}: unknown layer tag {tag} at byte {off - 1}")
            n_cfg = data[off]; off += 1
            config = tuple(int(v) for v in np.frombuffer(data, "<u4", n_cfg, off))
            off += 4 * n_cfg
            layer = _build_layer(kind, config)
            n_arr = data[off]; off += 1
            targets = [p.value for p in layer.params()] + layer.state_arrays()
            if n_arr != len(targets):
                raise FormatError(
                    f"{path}: layer {kind} carries {n_arr} arrays, "
                    f"expected {len(targets)} (byte {off - 1})")
            for target in targets:
                ndim = data[off]; off += 1
                dims = tuple(int(v) for v in np.frombuffer(data, "<u4", ndim, off))
                off += 4 * ndim
                count = int(np.prod(dims)) if dims else 1
                arr = np.frombuffer(data, "<f4", count, off).reshape(dims)
                off += 4 * count
                if target.shape != arr.shape:
                    raise FormatError(
                        f"{path}: array shape {arr.shape} != layer "
                        f"{kind}{target.shape} (byte {off})")
                target[...] = arr
            layers.append(layer)
    except ValueError as exc:
        raise FormatError(f"{path}: truncated at byte {off}") from exc
    return L.Network(layers)
