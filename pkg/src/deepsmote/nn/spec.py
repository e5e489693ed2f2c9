"""Declarative layer stacks and static shape inference."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from ..errors import ShapeError

KINDS = (
    "conv2d",
    "conv2d_transpose",
    "batchnorm2d",
    "leaky_relu",
    "relu",
    "tanh",
    "flatten",
    "unflatten",
    "linear",
    "maxpool2d",
)

_REQUIRED = {
    "conv2d": ("in_channels", "out_channels", "kernel"),
    "conv2d_transpose": ("in_channels", "out_channels", "kernel"),
    "batchnorm2d": ("num_features",),
    "linear": ("in_features", "out_features"),
    "unflatten": ("shape",),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    kernel: Optional[int] = None
    stride: int = 1
    padding: int = 0
    negative_slope: float = 0.2
    num_features: Optional[int] = None
    in_features: Optional[int] = None
    out_features: Optional[int] = None
    shape: Optional[tuple] = None
    bias: bool = True  # conv/linear only; off where batch norm follows

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for name in _REQUIRED.get(self.kind, ()):
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind} requires {name}")
        if self.kind == "maxpool2d" and self.kernel is None:
            object.__setattr__(self, "kernel", 2)
            object.__setattr__(self, "stride", 2)
        if self.shape is not None:
            object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        for name in ("in_channels", "out_channels", "num_features", "in_features", "out_features"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.kernel is not None and self.kernel < 1:
            raise ValueError(f"kernel must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @property
    def trainable(self) -> bool:
        return self.kind in ("conv2d", "conv2d_transpose", "batchnorm2d", "linear")

    def to_dict(self) -> dict:
        defaults = {f.name: f.default for f in fields(self)}
        out = {"kind": self.kind}
        for key, value in asdict(self).items():
            if key == "kind" or value is None:
                continue
            if key in ("stride", "padding", "negative_slope", "bias") and value == defaults[key]:
                continue
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def layer_output_shape(layer: LayerSpec, in_shape: tuple, index=None) -> tuple:
    """Per-sample output shape of ``layer`` given per-sample ``in_shape``."""
    kind = layer.kind
    where = f"{index} ({kind})" if index is not None else kind
    if kind in ("conv2d", "conv2d_transpose", "batchnorm2d", "maxpool2d"):
        if len(in_shape) != 3:
            raise ShapeError(f"expected (C, H, W) input, got {in_shape}", where)
        c, h, w = in_shape
        if kind == "batchnorm2d":
            if c != layer.num_features:
                raise ShapeError(f"expected {layer.num_features} channels, got {c}", where)
            return in_shape
        if kind == "maxpool2d":
            if h % layer.kernel or w % layer.kernel or layer.stride != layer.kernel:
                raise ShapeError(f"pooling {layer.kernel}x{layer.kernel} does not tile {h}x{w}", where)
            return (c, h // layer.kernel, w // layer.kernel)
        if c != layer.in_channels:
            raise ShapeError(f"expected {layer.in_channels} channels, got {c}", where)
        size = conv_out if kind == "conv2d" else conv_transpose_out
        oh = size(h, layer.kernel, layer.stride, layer.padding)
        ow = size(w, layer.kernel, layer.stride, layer.padding)
        if oh < 1 or ow < 1:
            raise ShapeError(f"spatial size {h}x{w} collapses to {oh}x{ow}", where)
        return (layer.out_channels, oh, ow)
    if kind == "linear":
        if len(in_shape) != 1 or in_shape[0] != layer.in_features:
            raise ShapeError(f"expected ({layer.in_features},) input, got {in_shape}", where)
        return (layer.out_features,)
    if kind == "flatten":
        n = 1
        for s in in_shape:
            n *= s
        return (n,)
    if kind == "unflatten":
        n = 1
        for s in layer.shape:
            n *= s
        if len(in_shape) != 1 or in_shape[0] != n:
            raise ShapeError(f"cannot unflatten {in_shape} into {layer.shape}", where)
        return layer.shape
    return in_shape


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered layer stack with a declared per-sample input shape.

    Construction type-checks the chain, so a ``NetworkSpec`` that exists is
    known to be shape-sound.
    """

    input_shape: tuple
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()

    def shapes(self) -> list:
        """Per-sample shapes: input first, then the output of every layer."""
        chain = [self.input_shape]
        for i, layer in enumerate(self.layers):
            chain.append(layer_output_shape(layer, chain[-1], i))
        return chain

    @property
    def output_shape(self) -> tuple:
        return self.shapes()[-1]

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec.from_dict(l) for l in d["layers"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))


def encoder_spec(latent_dim=300, channels=(64, 64, 64, 64), in_channels=1, size=32) -> NetworkSpec:
    """Four strided conv blocks (conv, batch norm, leaky ReLU) and a linear head."""
    layers = []
    c_in, s = in_channels, size
    for c in channels:
        layers += [
            LayerSpec("conv2d", in_channels=c_in, out_channels=c, kernel=4, stride=2, padding=1, bias=False),
            LayerSpec("batchnorm2d", num_features=c),
            LayerSpec("leaky_relu", negative_slope=0.2),
        ]
        c_in, s = c, s // 2
    layers += [
        LayerSpec("flatten"),
        LayerSpec("linear", in_features=c_in * s * s, out_features=latent_dim),
    ]
    return NetworkSpec((in_channels, size, size), tuple(layers))


def decoder_spec(latent_dim=300, channels=(64, 64, 64, 64), out_channels=1, size=32) -> NetworkSpec:
    """Mirror of :func:`encoder_spec`: linear, then four transposed convs ending in tanh."""
    depth = len(channels)
    s = size >> depth
    widths = list(reversed(channels))
    layers = [
        LayerSpec("linear", in_features=latent_dim, out_features=widths[0] * s * s),
        LayerSpec("relu"),
        LayerSpec("unflatten", shape=(widths[0], s, s)),
    ]
    for i in range(depth):
        c_in = widths[i]
        last = i == depth - 1
        c_out = out_channels if last else widths[i + 1]
        layers.append(
            LayerSpec("conv2d_transpose", in_channels=c_in, out_channels=c_out, kernel=4, stride=2, padding=1, bias=last)
        )
        if last:
            layers.append(LayerSpec("tanh"))
        else:
            layers += [LayerSpec("batchnorm2d", num_features=c_out), LayerSpec("relu")]
    return NetworkSpec((latent_dim,), tuple(layers))


def classifier_spec(num_classes=10, in_channels=1, size=32, hidden=64) -> NetworkSpec:
    """Small CNN: two conv/ReLU/max-pool stages and two linear layers."""
    s = size // 4
    layers = (
        LayerSpec("conv2d", in_channels=in_channels, out_channels=16, kernel=3, stride=1, padding=1),
        LayerSpec("relu"),
        LayerSpec("maxpool2d"),
        LayerSpec("conv2d", in_channels=16, out_channels=32, kernel=3, stride=1, padding=1),
        LayerSpec("relu"),
        LayerSpec("maxpool2d"),
        LayerSpec("flatten"),
        LayerSpec("linear", in_features=32 * s * s, out_features=hidden),
        LayerSpec("relu"),
        LayerSpec("linear", in_features=hidden, out_features=num_classes),
    )
    return NetworkSpec((in_channels, size, size), layers)
