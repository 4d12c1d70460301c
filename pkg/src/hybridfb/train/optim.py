"""Nesterov momentum SGD and the per-phase cosine schedule."""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np


def nag_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], state: dict, lr: float,
             momentum: float = 0.9, weight_decay: float = 1e-4,
             decay_mask: Optional[Sequence[bool]] = None) -> Sequence[np.ndarray]:
    """One in-place Nesterov step.

    ``g = grad + wd * p``; ``m = mu * m + g``; ``p -= lr * (g + mu * m)``.
    Momentum buffers live in ``state["momentum"]`` (created on first use).
    ``decay_mask[i]`` False disables weight decay for parameter ``i``.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    bufs = state.setdefault("momentum", [None] * len(params))
    if len(bufs) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
        if weight_decay and (decay_mask is None or decay_mask[i]):
            g = g + weight_decay * p
        m = bufs[i]
        if m is None:
            m = bufs[i] = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ValueError(f"momentum buffer {i} has shape {m.shape}, parameter {p.shape}")
        m *= momentum
        m += g
        p -= (lr * (g + momentum * m)).astype(p.dtype, copy=False)
    return params


def cosine_lr(epoch: float, total_epochs: int, warmup_epochs: float, lr0: float) -> float:
    """Linear warmup from 0, then cosine decay towards 0.

    ``epoch`` may be fractional (per-iteration schedules).
    """
    if total_epochs < 1 or not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if warmup_epochs < 0 or warmup_epochs >= total_epochs and warmup_epochs > 0:
        raise ValueError("warmup must be shorter than the phase")
    if epoch < warmup_epochs:
        return lr0 * epoch / warmup_epochs
    t = (epoch - warmup_epochs) / (total_epochs - warmup_epochs)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t))
