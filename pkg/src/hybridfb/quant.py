"""Ternary weight quantization.

The rule is the threshold/scale scheme of ternary weight networks: entries
whose magnitude exceeds ``threshold_factor * mean(|W|)`` keep their sign, the
rest become zero, and a single per-matrix scale is the mean magnitude of the
kept entries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class QuantizerConfig:
    threshold_factor: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.threshold_factor < 1.0:
            raise ValueError(f"threshold_factor must be in (0, 1), got {self.threshold_factor}")


@dataclass
class TernaryMatrix:
    """Entries in {-1, 0, +1} (int8) times one positive scale."""

    entries: np.ndarray
    scale: float = 1.0
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.size and not np.isin(e, (-1, 0, 1)).all():
            raise ValueError("ternary entries must lie in {-1, 0, +1}")
        self.entries = np.ascontiguousarray(e, dtype=np.int8)
        self.scale = float(self.scale)
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.entries.shape

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return int(np.prod(self.entries.shape[1:]))

    def dense(self, dtype=np.float64) -> np.ndarray:
        return (self.scale * self.entries).astype(dtype)

    def tensor(self, dtype=np.float64) -> Tensor:
        return Tensor(self.dense(dtype))

    def __eq__(self, other):
        if not isinstance(other, TernaryMatrix):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.entries, other.entries)


def ternary_quantize(w, cfg: QuantizerConfig = QuantizerConfig()) -> TernaryMatrix:
    """Quantize a real array to a :class:`TernaryMatrix`.

    If no entry clears the threshold (e.g. an all-zero input) the result is the
    zero matrix with scale 1 and ``degenerate=True``.
    """
    w = np.asarray(w.data if isinstance(w, Tensor) else w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot quantize an empty matrix")
    mag = np.abs(w)
    delta = cfg.threshold_factor * mag.mean()
    keep = mag > delta
    if not keep.any():
        return TernaryMatrix(np.zeros(w.shape, dtype=np.int8), 1.0, degenerate=True)
    t = np.where(keep, np.sign(w), 0).astype(np.int8)
    return TernaryMatrix(t, float(mag[keep].mean()))


def ste_ternary(w: Tensor, cfg: QuantizerConfig = QuantizerConfig()) -> Tensor:
    """Forward: ``scale * t``; backward: gradient passed to ``w`` unchanged."""
    q = ternary_quantize(w, cfg)
    out = q.dense(w.dtype).reshape(w.shape)

    def backward(g):
        return (g,)

    return Tensor._from_op(out, (w,), backward)
