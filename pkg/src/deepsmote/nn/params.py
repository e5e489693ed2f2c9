"""Trainable parameters, batch-norm buffers, optimizer state and the DSMW file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spec import NetworkSpec

MAGIC = b"DSMW"
VERSION = 1

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ParamStore:
    """Named parameters (``"<layer>.weight"``, ``"<layer>.bias"``) plus BN running
    statistics, Adam moment buffers and the Adam timestep."""

    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def layer(self, index: int) -> dict:
        prefix = f"{index}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def copy(self, dtype=None) -> "ParamStore":
        def cp(d):
            return {k: np.array(v, dtype=dtype or v.dtype) for k, v in d.items()}

        return ParamStore(cp(self.params), cp(self.buffers), cp(self.m), cp(self.v), self.t)

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def init_params(spec: NetworkSpec, rng: np.random.Generator, init="dcgan", dtype=np.float32) -> ParamStore:
    """Initialise every trainable layer.

    ``init="dcgan"`` draws conv/linear weights from N(0, 0.02**2); ``"he"`` uses
    N(0, 2/fan_in). Biases start at zero, BN scale at one and shift at zero.
    """
    store = ParamStore()
    for i, layer in enumerate(spec.layers):
        if layer.kind in ("conv2d", "conv2d_transpose", "linear"):
            if layer.kind == "conv2d":
                shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
                fan_in = layer.in_channels * layer.kernel**2
                n_out = layer.out_channels
            elif layer.kind == "conv2d_transpose":
                shape = (layer.in_channels, layer.out_channels, layer.kernel, layer.kernel)
                fan_in = layer.in_channels * layer.kernel**2
                n_out = layer.out_channels
            else:
                shape = (layer.out_features, layer.in_features)
                fan_in = layer.in_features
                n_out = layer.out_features
            std = 0.02 if init == "dcgan" else np.sqrt(2.0 / fan_in)
            store.params[f"{i}.weight"] = (rng.standard_normal(shape) * std).astype(dtype)
            if layer.bias:
                store.params[f"{i}.bias"] = np.zeros(n_out, dtype=dtype)
        elif layer.kind == "batchnorm2d":
            c = layer.num_features
            store.params[f"{i}.weight"] = np.ones(c, dtype=dtype)
            store.params[f"{i}.bias"] = np.zeros(c, dtype=dtype)
            store.buffers[f"{i}.running_mean"] = np.zeros(c, dtype=dtype)
            store.buffers[f"{i}.running_var"] = np.ones(c, dtype=dtype)
    return store


def save_params(store: ParamStore, path) -> None:
    """Write parameters and BN buffers as little-endian float32 records."""
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    for name, arr in list(store.params.items()) + list(store.buffers.items()):
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def load_params(path) -> ParamStore:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a DSMW file (magic {data[:4]!r})")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported DSMW version {version}")
    pos = 8
    store = ParamStore()
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 4 * count > len(data):
            raise ValueError(f"{path}: truncated record {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
        target = store.buffers if name.endswith(("running_mean", "running_var")) else store.params
        target[name] = arr
    return store
