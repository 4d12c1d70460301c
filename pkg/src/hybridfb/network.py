"""Trainable networks built from an ArchSpec and a QuantPlan."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional, Union

import numpy as np

from . import functional as F
from .arch import ArchSpec, LayerDesc, QuantMode, QuantPlan
from .quant import QuantizerConfig, TernaryMatrix, ste_ternary, ternary_quantize
from .spn import LifecycleError, LifecycleState, SpnConvLayer, SpnDenseLayer, _xavier
from .tensor import Tensor, parameter

StateValue = Union[np.ndarray, TernaryMatrix]


class BatchNorm2d:
    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = parameter(np.ones(channels, dtype=dtype))
        self.beta = parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum, self.eps = momentum, eps
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return F.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           self.training, self.momentum, self.eps)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def state(self) -> dict:
        return {"gamma": self.gamma.data, "beta": self.beta.data,
                "running_mean": self.running_mean, "running_var": self.running_var}

    def load(self, s: dict) -> None:
        self.gamma.data = np.array(s["gamma"])
        self.beta.data = np.array(s["beta"])
        self.running_mean[...] = s["running_mean"]
        self.running_var[...] = s["running_var"]


class _Ternarizable:
    """Full-precision master weight with the TWN lifecycle."""

    def __init__(self, weight: np.ndarray, quantizer: QuantizerConfig):
        self.weight = parameter(weight)
        self.quantizer = quantizer
        self.state = LifecycleState.FULL_PRECISION
        self.frozen: Optional[TernaryMatrix] = None

    def effective_weight(self) -> Tensor:
        if self.state is LifecycleState.QUANT_ACTIVE:
            return ste_ternary(self.weight, self.quantizer)
        if self.state is LifecycleState.FROZEN_TERNARY:
            return Tensor(self.frozen.dense(self.weight_dtype))
        return self.weight

    def activate_quantization(self) -> None:
        if self.state is not LifecycleState.FULL_PRECISION:
            raise LifecycleError(f"cannot activate quantization from {self.state.value}")
        self.state = LifecycleState.QUANT_ACTIVE

    def freeze_and_fold(self) -> None:
        if self.state is not LifecycleState.QUANT_ACTIVE:
            raise LifecycleError(f"freeze requires QUANT_ACTIVE, layer is {self.state.value}")
        self.weight_dtype = self.weight.dtype
        self.frozen = ternary_quantize(self.weight, self.quantizer)
        self.state = LifecycleState.FROZEN_TERNARY

    def parameters(self) -> list[Tensor]:
        return [] if self.state is LifecycleState.FROZEN_TERNARY else [self.weight]

    def ternary_masters(self) -> list[Tensor]:
        return [] if self.state is LifecycleState.FROZEN_TERNARY else [self.weight]

    def named_state(self) -> dict:
        if self.state is LifecycleState.FROZEN_TERNARY:
            return {"weight_t": self.frozen}
        return {"weight": self.weight.data}

    def load_named_state(self, state, arrays: dict) -> None:
        self.state = LifecycleState(state)
        if self.state is LifecycleState.FROZEN_TERNARY:
            self.weight_dtype = self.weight.dtype
            self.frozen = arrays["weight_t"]
        else:
            self.weight = parameter(np.array(arrays["weight"]))
            self.frozen = None


class TernaryConv(_Ternarizable):
    """TWN convolution (standard or depthwise)."""

    def __init__(self, desc: LayerDesc, rng, quantizer, dtype=np.float32):
        depthwise = desc.kind == "depthwise_conv"
        shape = (desc.c_in, 1, desc.k, desc.k) if depthwise else (desc.c_out, desc.c_in, desc.k, desc.k)
        fan_in = desc.k * desc.k * (1 if depthwise else desc.c_in)
        fan_out = desc.k * desc.k * (1 if depthwise else desc.c_out)
        super().__init__(_xavier(rng, shape, fan_in, fan_out, dtype), quantizer)
        self.weight_dtype = np.dtype(dtype)
        self.depthwise, self.stride, self.padding = depthwise, desc.stride, desc.padding

    def __call__(self, x: Tensor) -> Tensor:
        conv = F.depthwise_conv2d if self.depthwise else F.conv2d
        return conv(x, self.effective_weight(), self.stride, self.padding)


class TernaryDense(_Ternarizable):
    def __init__(self, desc: LayerDesc, rng, quantizer, dtype=np.float32):
        super().__init__(_xavier(rng, (desc.c_out, desc.c_in), desc.c_in, desc.c_out, dtype), quantizer)
        self.weight_dtype = np.dtype(dtype)
        self.bias = parameter(np.zeros(desc.c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.dense(x, self.effective_weight(), self.bias)

    def parameters(self) -> list[Tensor]:
        return super().parameters() + [self.bias]

    def named_state(self) -> dict:
        return {**super().named_state(), "bias": self.bias.data}

    def load_named_state(self, state, arrays: dict) -> None:
        super().load_named_state(state, arrays)
        self.bias = parameter(np.array(arrays["bias"]))


class DepthwiseConv:
    def __init__(self, desc: LayerDesc, rng, dtype=np.float32):
        kk = desc.k * desc.k
        self.weight = parameter(_xavier(rng, (desc.c_in, 1, desc.k, desc.k), kk, kk, dtype))
        self.stride, self.padding = desc.stride, desc.padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.depthwise_conv2d(x, self.weight, self.stride, self.padding)

    def parameters(self) -> list[Tensor]:
        return [self.weight]

    def named_state(self) -> dict:
        return {"weight": self.weight.data}

    def load_named_state(self, state, arrays: dict) -> None:
        self.weight = parameter(np.array(arrays["weight"]))


class HybridBankLayer:
    """Full-precision conv for the leading ``c_fp`` channels, SPN conv for the rest.

    With ``c_spn == 0`` this is exactly a standard convolution and with
    ``c_fp == 0`` exactly a strassenified one.
    """

    def __init__(self, c_in: int, c_out: int, k: int, stride: int, padding: int, c_fp: int,
                 hidden: int, rng: Optional[np.random.Generator] = None, dtype=np.float32,
                 quantizer: QuantizerConfig = QuantizerConfig()):
        if not 0 <= c_fp <= c_out:
            raise ValueError(f"full-precision channel count {c_fp} outside [0, {c_out}]")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.k, self.stride, self.padding = c_in, c_out, k, stride, padding
        self.c_fp, self.c_spn = c_fp, c_out - c_fp
        self.fp_filters: Optional[Tensor] = None
        self.spn_part: Optional[SpnConvLayer] = None
        if c_fp:
            self.fp_filters = parameter(_xavier(rng, (c_fp, c_in, k, k), c_in * k * k, c_out * k * k, dtype))
        if self.c_spn:
            self.spn_part = SpnConvLayer(c_in, self.c_spn, k, hidden, stride, padding, rng, dtype, quantizer)

    @property
    def alpha(self) -> float:
        return self.c_fp / self.c_out

    def __call__(self, x: Tensor) -> Tensor:
        return hybrid_forward(self, x)

    def parameters(self) -> list[Tensor]:
        ps = [self.fp_filters] if self.fp_filters is not None else []
        return ps + (self.spn_part.parameters() if self.spn_part is not None else [])

    def ternary_masters(self) -> list[Tensor]:
        return self.spn_part.ternary_masters() if self.spn_part is not None else []

    def lifecycle_layers(self) -> list:
        return [self.spn_part] if self.spn_part is not None else []

    def named_state(self) -> dict:
        s = {}
        if self.fp_filters is not None:
            s["fp_filters"] = self.fp_filters.data
        if self.spn_part is not None:
            s.update({f"spn.{k}": v for k, v in self.spn_part.named_state().items()})
        return s

    def load_named_state(self, state, arrays: dict) -> None:
        if self.fp_filters is not None:
            self.fp_filters = parameter(np.array(arrays["fp_filters"]))
        if self.spn_part is not None:
            self.spn_part.load_named_state(state, {k[4:]: v for k, v in arrays.items() if k.startswith("spn.")})


def hybrid_forward(layer: HybridBankLayer, x: Tensor) -> Tensor:
    """Concatenate full-precision and strassenified outputs, full precision first."""
    if x.ndim != 4 or x.shape[1] != layer.c_in:
        raise ValueError(f"hybrid bank expects [N,{layer.c_in},H,W], got {x.shape}")
    fp = F.conv2d(x, layer.fp_filters, layer.stride, layer.padding) if layer.c_fp else None
    sp = layer.spn_part(x) if layer.c_spn else None
    if sp is None:
        return fp
    if fp is None:
        return sp
    return F.concat_channels(fp, sp)


class HybridDense:
    """Dense layer: full-precision rows first, then a strassenified block."""

    def __init__(self, c_in: int, c_out: int, c_fp: int, hidden: int, rng, dtype=np.float32,
                 quantizer: QuantizerConfig = QuantizerConfig()):
        self.c_in, self.c_out, self.c_fp, self.c_spn = c_in, c_out, c_fp, c_out - c_fp
        self.weight = parameter(_xavier(rng, (c_fp, c_in), c_in, c_out, dtype)) if c_fp else None
        self.spn_part = SpnDenseLayer(c_in, self.c_spn, hidden, rng, dtype, quantizer) if self.c_spn else None
        self.bias = parameter(np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        parts = []
        if self.weight is not None:
            parts.append(F.matmul(x, F.transpose(self.weight)))
        if self.spn_part is not None:
            parts.append(self.spn_part(x))
        y = parts[0] if len(parts) == 1 else F.concat(parts, axis=1)
        return F.add(y, self.bias)

    def parameters(self) -> list[Tensor]:
        ps = [self.weight] if self.weight is not None else []
        ps += self.spn_part.parameters() if self.spn_part is not None else []
        return ps + [self.bias]

    def ternary_masters(self) -> list[Tensor]:
        return self.spn_part.ternary_masters() if self.spn_part is not None else []

    def lifecycle_layers(self) -> list:
        return [self.spn_part] if self.spn_part is not None else []

    def named_state(self) -> dict:
        s = {"bias": self.bias.data}
        if self.weight is not None:
            s["weight"] = self.weight.data
        if self.spn_part is not None:
            s.update({f"spn.{k}": v for k, v in self.spn_part.named_state().items()})
        return s

    def load_named_state(self, state, arrays: dict) -> None:
        self.bias = parameter(np.array(arrays["bias"]))
        if self.weight is not None:
            self.weight = parameter(np.array(arrays["weight"]))
        if self.spn_part is not None:
            self.spn_part.load_named_state(state, {k[4:]: v for k, v in arrays.items() if k.startswith("spn.")})


class Network:
    """Sequential conv -> BN -> ReLU stack, global pool and classifier."""

    def __init__(self, spec: ArchSpec, plan: QuantPlan, seed: int = 0, dtype=np.float32,
                 quantizer: QuantizerConfig = QuantizerConfig()):
        self.spec, self.plan, self.seed = spec, plan, seed
        self.dtype = np.dtype(dtype)
        self.phase = LifecycleState.FULL_PRECISION
        rng = np.random.default_rng(seed)
        self.units: list[tuple[LayerDesc, object, Optional[BatchNorm2d]]] = []
        for desc in spec.layers:
            self.units.append((desc, self._make(desc, rng, quantizer), self._make_bn(desc)))
        self.training = True

    def _make(self, desc: LayerDesc, rng, quantizer):
        plan, dt = self.plan, self.dtype
        twn = plan.mode is QuantMode.TWN
        if desc.kind == "global_pool":
            return None
        if desc.kind == "depthwise_conv":
            return TernaryConv(desc, rng, quantizer, dt) if twn else DepthwiseConv(desc, rng, dt)
        if desc.kind == "dense":
            if twn:
                return TernaryDense(desc, rng, quantizer, dt)
            c_fp, _, h = plan.dense_split(desc.c_out)
            return HybridDense(desc.c_in, desc.c_out, c_fp, h, rng, dt, quantizer)
        if twn:
            return TernaryConv(desc, rng, quantizer, dt)
        c_fp, _, h = plan.conv_split(desc.c_out)
        return HybridBankLayer(desc.c_in, desc.c_out, desc.k, desc.stride, desc.padding, c_fp, h, rng, dt,
                               quantizer)

    def _make_bn(self, desc: LayerDesc) -> Optional[BatchNorm2d]:
        if desc.kind in ("standard_conv", "depthwise_conv", "pointwise_conv"):
            return BatchNorm2d(desc.c_out, self.dtype)
        return None

    # -- running ------------------------------------------------------------------
    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        for desc, mod, bn in self.units:
            if desc.kind == "global_pool":
                x = F.global_avg_pool(x)
                continue
            x = mod(x)
            if bn is not None:
                x = F.relu(bn(x))
        return x

    __call__ = forward

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        for _, _, bn in self.units:
            if bn is not None:
                bn.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    # -- parameters ---------------------------------------------------------------
    def modules(self) -> Iterator[tuple[str, object]]:
        for desc, mod, bn in self.units:
            if mod is not None:
                yield desc.name, mod
            if bn is not None:
                yield desc.name + ".bn", bn

    def parameters(self) -> list[Tensor]:
        return [p for _, m in self.modules() for p in m.parameters()]

    def decay_exempt(self) -> set[int]:
        """ids of parameters that receive no weight decay in the current phase.

        Batchnorm and bias parameters never decay; ternary masters do not decay
        while quantization is active.
        """
        ids = set()
        for _, m in self.modules():
            if isinstance(m, BatchNorm2d):
                ids.update(id(p) for p in m.parameters())
            if hasattr(m, "bias"):
                ids.add(id(m.bias))
            if self.phase is LifecycleState.QUANT_ACTIVE and hasattr(m, "ternary_masters"):
                ids.update(id(p) for p in m.ternary_masters())
        return ids

    def lifecycle_layers(self) -> list:
        out = []
        for _, m in self.modules():
            if isinstance(m, _Ternarizable):
                out.append(m)
            elif hasattr(m, "lifecycle_layers"):
                out.extend(m.lifecycle_layers())
        return out

    def activate_quantization(self) -> None:
        for layer in self.lifecycle_layers():
            layer.activate_quantization()
        self.phase = LifecycleState.QUANT_ACTIVE

    def freeze_and_fold(self) -> None:
        for layer in self.lifecycle_layers():
            layer.freeze_and_fold()
        self.phase = LifecycleState.FROZEN_TERNARY

    def set_phase(self, target: LifecycleState) -> None:
        """Advance the lifecycle to ``target`` (never backwards)."""
        order = list(LifecycleState)
        if order.index(target) < order.index(self.phase):
            raise LifecycleError(f"cannot go from {self.phase.value} back to {target.value}")
        if self.phase is LifecycleState.FULL_PRECISION and target is not LifecycleState.FULL_PRECISION:
            self.activate_quantization()
        if self.phase is LifecycleState.QUANT_ACTIVE and target is LifecycleState.FROZEN_TERNARY:
            self.freeze_and_fold()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- state ----------------------------------------------------------------------
    def state_dict(self) -> "OrderedDict[str, StateValue]":
        out: OrderedDict[str, StateValue] = OrderedDict()
        for name, m in self.modules():
            items = m.state() if isinstance(m, BatchNorm2d) else m.named_state()
            for k, v in items.items():
                out[f"{name}.{k}"] = v
        return out

    def load_state_dict(self, state: dict, phase) -> None:
        phase = LifecycleState(phase)
        for name, m in self.modules():
            prefix = name + "."
            sub = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)
                   and "." not in k[len(prefix):].replace("spn.", "", 1)}
            if isinstance(m, BatchNorm2d):
                m.load(sub)
            else:
                m.load_named_state(phase, sub)
        self.phase = phase

    def copy(self) -> "Network":
        """Independent deep copy (same phase and weights)."""
        other = Network(self.spec, self.plan, self.seed, self.dtype)
        if self.phase is not LifecycleState.FULL_PRECISION:
            other.set_phase(self.phase)
        state = OrderedDict((k, v.copy() if isinstance(v, np.ndarray) else
                             TernaryMatrix(v.entries.copy(), v.scale, v.degenerate))
                            for k, v in self.state_dict().items())
        other.load_state_dict(state, self.phase)
        other.train(self.training)
        return other


def instantiate(spec: ArchSpec, plan: QuantPlan, seed: int = 0, dtype=np.float32) -> Network:
    """Build a network realising ``spec`` under ``plan`` with Xavier-initialised weights."""
    return Network(spec, plan, seed, dtype)
