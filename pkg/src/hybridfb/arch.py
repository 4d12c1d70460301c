"""Architecture descriptions and quantization plans.

An :class:`ArchSpec` is a flat, fully resolved list of layer descriptors
(kinds, channel counts, kernel, stride, spatial extents) that both the cost
model and the network builder consume. A :class:`QuantPlan` says how each
layer kind is realised.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Optional

from .functional import conv_output_size

LAYER_KINDS = ("standard_conv", "depthwise_conv", "pointwise_conv", "global_pool", "dense")


def round_half_up(x: float) -> int:
    """Nearest integer, ties away from zero for positive ``x``."""
    return int(math.floor(x + 0.5))


def scale_channels(c: int, width: float) -> int:
    """Width-multiplier scaling: nearest even channel count, at least 1."""
    return max(1, 2 * round_half_up(c * width / 2))


@dataclass(frozen=True)
class LayerDesc:
    name: str
    kind: str
    c_in: int
    c_out: int
    k: int = 1
    stride: int = 1
    padding: int = 0
    in_hw: tuple[int, int] = (1, 1)
    out_hw: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "depthwise_conv" and self.c_in != self.c_out:
            raise ValueError("depthwise layers keep the channel count")

    @property
    def is_conv(self) -> bool:
        return self.kind in ("standard_conv", "pointwise_conv")

    @property
    def positions(self) -> int:
        return self.out_hw[0] * self.out_hw[1]


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple[LayerDesc, ...]
    width_multiplier: float = 1.0
    resolution: int = 224
    in_channels: int = 3
    num_classes: int = 1000

    def __post_init__(self):
        prev_c, prev_hw = self.in_channels, (self.resolution, self.resolution)
        for layer in self.layers:
            if layer.c_in != prev_c:
                raise ValueError(f"{layer.name}: expects {layer.c_in} channels, previous layer gives {prev_c}")
            if layer.kind != "dense" and layer.in_hw != prev_hw:
                raise ValueError(f"{layer.name}: spatial extents do not chain")
            prev_c, prev_hw = layer.c_out, layer.out_hw

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(layer) for layer in self.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        layers = tuple(LayerDesc(**{**l, "in_hw": tuple(l["in_hw"]), "out_hw": tuple(l["out_hw"])})
                       for l in d["layers"])
        return cls(**{**d, "layers": layers})

    def weight_count(self) -> int:
        """Weights of all conv and dense layers (no biases)."""
        total = 0
        for l in self.layers:
            if l.kind == "depthwise_conv":
                total += l.c_in * l.k * l.k
            elif l.is_conv:
                total += l.c_out * l.c_in * l.k * l.k
            elif l.kind == "dense":
                total += l.c_out * l.c_in
        return total

    def bias_count(self) -> int:
        """One bias per conv output channel (batchnorm folded) plus dense biases."""
        return sum(l.c_out for l in self.layers if l.kind != "global_pool")


class _Builder:
    def __init__(self, in_channels: int, resolution: int):
        self.c = in_channels
        self.hw = (resolution, resolution)
        self.layers: list[LayerDesc] = []

    def conv(self, name, kind, c_out, k, stride):
        pad = k // 2
        out = tuple(conv_output_size(s, k, stride, pad) for s in self.hw)
        self.layers.append(LayerDesc(name, kind, self.c, c_out, k, stride, pad, self.hw, out))
        self.c, self.hw = c_out, out

    def ds_block(self, name, c_out, stride):
        self.conv(f"{name}.dw", "depthwise_conv", self.c, 3, stride)
        self.conv(f"{name}.pw", "pointwise_conv", c_out, 1, 1)

    def head(self, num_classes):
        self.layers.append(LayerDesc("pool", "global_pool", self.c, self.c, in_hw=self.hw, out_hw=(1, 1)))
        self.layers.append(LayerDesc("fc", "dense", self.c, num_classes))


_MOBILENET_V1_BLOCKS = ((64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
                        (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1))


def build_mobilenets_v1(width_multiplier: float = 1.0, resolution: int = 224,
                        num_classes: int = 1000) -> ArchSpec:
    """MobileNets-V1: 3x3/2 stem, 13 depthwise-separable blocks, pool, dense."""
    if not 0.0 < width_multiplier <= 1.0:
        raise ValueError(f"width multiplier must be in (0, 1], got {width_multiplier}")
    if resolution < 32 or resolution % 32:
        raise ValueError("resolution must be a positive multiple of 32")
    b = _Builder(3, resolution)
    b.conv("stem", "standard_conv", scale_channels(32, width_multiplier), 3, 2)
    for i, (c, s) in enumerate(_MOBILENET_V1_BLOCKS, start=1):
        b.ds_block(f"block{i}", scale_channels(c, width_multiplier), s)
    b.head(num_classes)
    return ArchSpec("mobilenet-v1", tuple(b.layers), width_multiplier, resolution, 3, num_classes)


def build_tinynet(num_classes: int = 10) -> ArchSpec:
    """Desk-scale stand-in: 32x32x3 input, 3x3/16 stem, three DS blocks, pool, dense."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    b = _Builder(3, 32)
    b.conv("stem", "standard_conv", 16, 3, 1)
    for i, (c, s) in enumerate(((32, 1), (64, 2), (64, 2)), start=1):
        b.ds_block(f"block{i}", c, s)
    b.head(num_classes)
    return ArchSpec("tinynet", tuple(b.layers), 1.0, 32, 3, num_classes)


def build_arch(name: str, width: float = 1.0, resolution: Optional[int] = None,
               num_classes: Optional[int] = None) -> ArchSpec:
    if name in ("mobilenet-v1", "mobilenets-v1", "mobilenet_v1"):
        return build_mobilenets_v1(width, resolution or 224, num_classes or 1000)
    if name == "tinynet":
        return build_tinynet(num_classes or 10)
    raise ValueError(f"unknown architecture {name!r}")


class QuantMode(str, enum.Enum):
    FP16 = "FP16"
    TWN = "TWN"
    STRASSEN = "STRASSEN"
    HYBRID = "HYBRID"


@dataclass(frozen=True)
class QuantPlan:
    """How conv/dense layers are realised.

    ``rho`` sets the hidden width of strassenified conv layers as
    ``round(rho * c_out_spn)``; the dense layer uses ``fc_hidden_factor`` times
    its strassenified outputs. Depthwise layers are never strassenified.
    """

    mode: QuantMode = QuantMode.FP16
    alpha: Optional[float] = None
    rho: float = 1.0
    fc_hidden_factor: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "mode", QuantMode(self.mode))
        if self.mode is QuantMode.HYBRID:
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ValueError(f"HYBRID needs alpha in [0, 1], got {self.alpha}")
        elif self.alpha is not None:
            raise ValueError("alpha is only meaningful in HYBRID mode")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.fc_hidden_factor > 0:
            raise ValueError("fc_hidden_factor must be positive")

    @property
    def has_ternary_filters(self) -> bool:
        return self.mode is QuantMode.STRASSEN or (self.mode is QuantMode.HYBRID and self.alpha < 1.0)

    def conv_split(self, c_out: int) -> tuple[int, int, int]:
        """(full-precision channels, strassenified channels, hidden width)."""
        if self.mode in (QuantMode.FP16, QuantMode.TWN):
            return c_out, 0, 0
        c_fp = round_half_up(self.alpha * c_out) if self.mode is QuantMode.HYBRID else 0
        c_spn = c_out - c_fp
        h = max(1, round_half_up(self.rho * c_spn)) if c_spn else 0
        return c_fp, c_spn, h

    def dense_split(self, c_out: int) -> tuple[int, int, int]:
        """The dense layer is strassenified in full whenever any filter is ternary."""
        if not self.has_ternary_filters:
            return c_out, 0, 0
        return 0, c_out, max(1, round_half_up(self.fc_hidden_factor * c_out))

    def label(self) -> str:
        if self.mode is QuantMode.HYBRID:
            return f"hybrid(alpha={self.alpha:g},rho={self.rho:g})"
        if self.mode is QuantMode.STRASSEN:
            return f"strassen(rho={self.rho:g})"
        return self.mode.value.lower()

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "alpha": self.alpha, "rho": self.rho,
                "fc_hidden_factor": self.fc_hidden_factor}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantPlan":
        return cls(**d)
