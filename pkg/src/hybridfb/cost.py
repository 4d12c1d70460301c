"""Analytic operation counts, model size, energy and throughput.

Counting conventions:

* a standard (or pointwise) conv costs ``H'W' * c_out * c_in * k^2`` MACs;
  a depthwise conv ``H'W' * c * k^2`` MACs;
* a strassenified conv with hidden width ``h`` (after folding ``a_hat``)
  costs ``H'W' * h`` multiplications and ``H'W' * h * (c_in*k^2 + c_out_spn)``
  additions, i.e. both ternary stages are charged as dense additions;
* TWN layers turn every MAC into an addition;
* pooling, batchnorm, bias and activations are not counted.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from .arch import ArchSpec, LayerDesc, QuantMode, QuantPlan

# bits per stored value
FP_BITS = 16
TERNARY_BITS = 2
# Storage of the strassenified dense layer, in bits per original dense weight.
# Calibrated: the published size column is only consistent with roughly 2 Mbit
# for the 512x1000 classifier (~4 bits/weight), far below the 2-bit entries of
# a dense SPN at the width the add counts imply.
FC_STORAGE_BITS_PER_WEIGHT = 4
BYTES_PER_KB = 1024


@dataclass(frozen=True)
class EnergyModel:
    """Energy per operation in units of one 16-bit addition."""

    e_add: float = 1.0
    e_mul: float = 1.0
    e_mac: float = 5.0

    def __post_init__(self):
        if not self.e_mac > self.e_add > 0 or self.e_mul <= 0:
            raise ValueError("energy model needs e_mac > e_add > 0 and e_mul > 0")


@dataclass(frozen=True)
class AreaModel:
    """Silicon area of a MAC unit and of an adder (relative)."""

    area_mac: float = 2.0
    area_adder: float = 1.0

    def __post_init__(self):
        if self.area_mac <= 0 or self.area_adder <= 0:
            raise ValueError("areas must be positive")


@dataclass
class LayerCost:
    name: str
    muls: int = 0
    adds: int = 0
    macs: int = 0
    bits: int = 0


@dataclass
class CostReport:
    network: str
    mode: str
    alpha: Optional[float]
    rho: Optional[float]
    muls: int
    adds: int
    macs: int
    model_size_bits: int
    energy_normalized: float = float("nan")
    throughput_normalized: float = float("nan")
    per_layer: list[LayerCost] = field(default_factory=list)

    @property
    def size_kb(self) -> float:
        return self.model_size_bits / 8 / BYTES_PER_KB

    def row(self) -> dict:
        return {
            "network": self.network, "alpha": self.alpha, "rho": self.rho,
            "muls": self.muls, "adds": self.adds, "macs": self.macs,
            "size_KB": round(self.size_kb, 4),
            "energy": round(self.energy_normalized, 6),
            "throughput": round(self.throughput_normalized, 6),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size_KB"] = self.size_kb
        return d


CSV_COLUMNS = ("network", "alpha", "rho", "muls", "adds", "macs", "size_KB", "energy", "throughput")


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------

def count_layer(layer: LayerDesc, plan: QuantPlan) -> tuple[int, int, int]:
    """(muls, adds, macs) for one layer under ``plan``."""
    if layer.out_hw[0] < 1 or layer.out_hw[1] < 1:
        raise ValueError(f"{layer.name}: unresolved output extent")
    P = layer.positions
    kk = layer.k * layer.k
    if layer.kind == "global_pool":
        return 0, 0, 0
    if layer.kind == "depthwise_conv":
        macs = P * layer.c_in * kk
        return (0, macs, 0) if plan.mode is QuantMode.TWN else (0, 0, macs)
    if layer.kind == "dense":
        fan_in = layer.c_in
        if plan.mode is QuantMode.TWN:
            return 0, fan_in * layer.c_out, 0
        c_fp, c_spn, h = plan.dense_split(layer.c_out)
        return h, h * (fan_in + c_spn), fan_in * c_fp
    fan_in = layer.c_in * kk
    if plan.mode is QuantMode.TWN:
        return 0, P * layer.c_out * fan_in, 0
    c_fp, c_spn, h = plan.conv_split(layer.c_out)
    return P * h, P * h * (fan_in + c_spn), P * c_fp * fan_in


def layer_size_bits(layer: LayerDesc, plan: QuantPlan) -> int:
    """Stored bits for one layer's weights and biases.

    Biases: one per output channel of every conv/dense layer (batchnorm folded
    into a per-channel shift), stored like full-precision weights. In TWN mode
    the whole parameter vector is stored at 2 bits plus one 16-bit scale per
    weight matrix.
    """
    if layer.kind == "global_pool":
        return 0
    kk = layer.k * layer.k
    fan_in = layer.c_in * (kk if layer.kind != "dense" else 1)
    n_weights = layer.c_in * kk if layer.kind == "depthwise_conv" else layer.c_out * fan_in
    if plan.mode is QuantMode.TWN:
        return TERNARY_BITS * (n_weights + layer.c_out) + FP_BITS
    bias = FP_BITS * layer.c_out
    if plan.mode is QuantMode.FP16 or layer.kind == "depthwise_conv":
        return FP_BITS * n_weights + bias
    if layer.kind == "dense":
        c_fp, c_spn, _ = plan.dense_split(layer.c_out)
        return FP_BITS * fan_in * c_fp + FC_STORAGE_BITS_PER_WEIGHT * fan_in * c_spn + bias
    c_fp, c_spn, h = plan.conv_split(layer.c_out)
    spn = TERNARY_BITS * h * (fan_in + c_spn) + FP_BITS * h if c_spn else 0
    return FP_BITS * fan_in * c_fp + spn + bias


def count_network(spec: ArchSpec, plan: QuantPlan) -> CostReport:
    """Sum per-layer counts and sizes (energy/throughput left unset)."""
    per_layer = []
    for layer in spec.layers:
        muls, adds, macs = count_layer(layer, plan)
        per_layer.append(LayerCost(layer.name, muls, adds, macs, layer_size_bits(layer, plan)))
    return CostReport(
        network=spec.name, mode=plan.mode.value, alpha=plan.alpha,
        rho=plan.rho if plan.mode in (QuantMode.STRASSEN, QuantMode.HYBRID) else None,
        muls=sum(p.muls for p in per_layer), adds=sum(p.adds for p in per_layer),
        macs=sum(p.macs for p in per_layer), model_size_bits=sum(p.bits for p in per_layer),
        per_layer=per_layer,
    )


def model_size(spec: ArchSpec, plan: QuantPlan) -> int:
    """Model size in bits."""
    return sum(layer_size_bits(layer, plan) for layer in spec.layers)


# ---------------------------------------------------------------------------
# energy / throughput
# ---------------------------------------------------------------------------

def _counts(report) -> tuple[float, float, float]:
    if isinstance(report, CostReport):
        return report.muls, report.adds, report.macs
    muls, adds, macs = report
    return muls, adds, macs


def energy(report, baseline_macs: float, model: EnergyModel = EnergyModel()) -> float:
    """Energy per inference relative to a MAC-only baseline of ``baseline_macs``."""
    if not baseline_macs > 0:
        raise ValueError("baseline MAC count must be positive")
    muls, adds, macs = _counts(report)
    return (muls * model.e_mul + adds * model.e_add + macs * model.e_mac) / (baseline_macs * model.e_mac)


def throughput(report, baseline_macs: float, area: AreaModel = AreaModel()) -> float:
    """Throughput relative to a MAC-only accelerator of the same area.

    Multiplications run on MAC units. With M MAC-unit ops and A adder ops the
    area split that balances both unit types gives
    ``area_mac * B / (area_mac * M + area_adder * A)``.
    """
    muls, adds, macs = _counts(report)
    m = macs + muls
    if m == 0 and adds == 0:
        raise ValueError("report has no work")
    return area.area_mac * baseline_macs / (area.area_mac * m + area.area_adder * adds)


def evaluate(spec: ArchSpec, plan: QuantPlan, energy_model: EnergyModel = EnergyModel(),
             area_model: AreaModel = AreaModel()) -> CostReport:
    """Counts plus energy/throughput normalised to the FP16 network of ``spec``."""
    report = count_network(spec, plan)
    base = count_network(spec, QuantPlan(QuantMode.FP16)).macs
    report.energy_normalized = energy(report, base, energy_model)
    report.throughput_normalized = throughput(report, base, area_model)
    return report


def table_report(spec: ArchSpec, plans: Sequence[QuantPlan], **models) -> list[CostReport]:
    """One evaluated report per plan, in input order."""
    return [evaluate(spec, plan, **models) for plan in plans]


def to_csv(reports: Iterable[CostReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        row = r.row()
        row["network"] = f"{r.network}:{r.mode.lower()}"
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return buf.getvalue()


def to_json(reports: Iterable[CostReport]) -> str:
    return json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2, sort_keys=True)
