"""Filter sensitivity to strassenification, and filter drift during quantization."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from ..network import HybridBankLayer, Network
from ..quant import QuantizerConfig, ternary_quantize
from .checkpoint import Checkpoint, load_checkpoint

# ---------------------------------------------------------------------------
# sensitivity
# ---------------------------------------------------------------------------

BUILTIN_FILTERS = {
    # a generic real 2x2 operand: the target is then a plain 2x2 matmul
    "matmul2x2": np.random.default_rng(2019).uniform(-1, 1, (2, 2)),
    "vertical": np.array([[1.0, -1.0], [1.0, -1.0]]),
    "sharpen": np.array([[1.5, -0.5], [-0.5, 1.5]]),
}

# every nonzero ternary pattern of length 4
_PATTERNS = np.array([p for p in itertools.product((-1, 0, 1), repeat=4) if any(p)], dtype=np.float64)


@dataclass
class SensitivityPoint:
    h: int
    loss: float
    sgd_loss: float
    diverged: bool = False


@dataclass
class _Stats:
    """Second moments that determine the loss of any (W_a, W_c, v)."""

    S: np.ndarray   # E[a a^T]
    R: np.ndarray   # E[a c^T]
    cc: float       # E[|c|^2]


def _ternary(w: np.ndarray, cfg: QuantizerConfig) -> np.ndarray:
    return ternary_quantize(w, cfg).dense(np.float64)


def _structure_loss(ta: np.ndarray, tc: np.ndarray, st: _Stats) -> float:
    """Loss of ternary patterns (W_a [h,4], W_c [4,h]) with the best real hidden vector."""
    G = (tc.T @ tc) * (ta @ st.S @ ta.T)
    g = np.einsum("ti,ij,jt->t", ta, st.R, tc)
    v = np.linalg.lstsq(G, g, rcond=None)[0]
    return max(st.cc - g @ v, 0.0)


def _best_term(ta: np.ndarray, tc: np.ndarray, t: int, st: _Stats) -> tuple[np.ndarray, np.ndarray, float]:
    """Optimal replacement for term ``t`` with all other terms fixed.

    Adding one rank-1 term to a least-squares fit lowers the loss by
    ``r^2 / d`` (Schur complement), evaluated here for all 80 x 80 patterns.
    """
    keep = [i for i in range(ta.shape[0]) if i != t]
    ao, co = ta[keep], tc[:, keep]
    P = _PATTERNS
    Goo = (co.T @ co) * (ao @ st.S @ ao.T)
    go = np.einsum("ti,ij,jt->t", ao, st.R, co)
    Ginv = np.linalg.pinv(Goo)
    base = st.cc - go @ Ginv @ go
    Gon = (P @ st.S @ ao.T)[:, None, :] * (P @ co)[None, :, :]
    r = P @ st.R @ P.T - Gon @ (Ginv @ go)
    den = np.einsum("pi,ij,pj->p", P, st.S, P)[:, None] * (P * P).sum(1)[None, :] \
        - np.einsum("pqk,kl,pql->pq", Gon, Ginv, Gon)
    gain = np.where(den > 1e-12, r * r / np.maximum(den, 1e-300), 0.0)
    p, q = np.unravel_index(np.argmax(gain), gain.shape)
    return P[p], P[q], max(base - gain[p, q], 0.0)


def _polish(ta: np.ndarray, tc: np.ndarray, st: _Stats, sweeps: int = 50) -> tuple[np.ndarray, np.ndarray, float]:
    """Replace one rank-1 ternary term at a time while the loss drops."""
    ta, tc = ta.copy(), tc.copy()
    best = _structure_loss(ta, tc, st)
    tol = 1e-13 * max(st.cc, 1.0)
    for _ in range(sweeps):
        improved = False
        for t in range(ta.shape[0]):
            pa, pc, loss = _best_term(ta, tc, t, st)
            if loss < best - tol:
                ta[t], tc[:, t], best, improved = pa, pc, loss, True
        if not improved:
            break
    return ta, tc, best


def _kick_search(ta, tc, loss, st: _Stats, rng: np.random.Generator, kicks: int):
    """Iterated local search: reset two random terms, re-polish, keep improvements."""
    h = ta.shape[0]
    for _ in range(kicks):
        if loss <= 1e-14 * max(st.cc, 1.0):
            break
        na, nc = ta.copy(), tc.copy()
        for t in rng.choice(h, size=min(2, h), replace=False):
            na[t] = _PATTERNS[rng.integers(len(_PATTERNS))]
            nc[:, t] = _PATTERNS[rng.integers(len(_PATTERNS))]
        na, nc, nl = _polish(na, nc, st)
        if nl < loss:
            ta, tc, loss = na, nc, nl
    return ta, tc, loss


def _extend(ta: np.ndarray, tc: np.ndarray, h: int, st: _Stats) -> tuple[np.ndarray, np.ndarray]:
    """Grow a structure to ``h`` terms, adding the best term each time."""
    while ta.shape[0] < h:
        ta = np.vstack([ta, np.zeros((1, 4))])
        tc = np.hstack([tc, np.zeros((4, 1))])
        pa, pc, _ = _best_term(ta, tc, ta.shape[0] - 1, st)
        ta[-1], tc[:, -1] = pa, pc
    return ta, tc


def _sgd_phase(a, c, b, h, rng, cfg: QuantizerConfig, fp_epochs, quant_epochs, lr, quant_lr, momentum,
               batch_size, clip):
    """SPN training: full-precision SGD, then STE training with W_b vec(B) folded.

    Returns ternary (W_a, W_c) patterns and the dataset loss, or None on divergence.
    """
    n = len(a)
    Wa = rng.uniform(-1, 1, (h, 4))
    Wb = rng.uniform(-1, 1, (h, 4))
    Wc = rng.uniform(-1, 1, (4, h))
    bufs = [np.zeros_like(Wa), np.zeros_like(Wb), np.zeros_like(Wc)]
    with np.errstate(all="ignore"):
        for _ in range(fp_epochs):
            order = rng.permutation(n)
            for i in range(0, n, batch_size):
                idx = order[i:i + batch_size]
                x, y = a[idx], c[idx]
                u = x @ Wa.T
                v = Wb @ b
                z = u * v
                d = 2 * (z @ Wc.T - y) / len(idx)
                dz = d @ Wc
                grads = [(dz * v).T @ x, np.outer((dz * u).sum(0), b), d.T @ z]
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
                if not math.isfinite(norm):
                    return None
                s = min(1.0, clip / norm) if norm > 0 else 1.0
                for p, g, m in zip((Wa, Wb, Wc), grads, bufs):
                    m *= momentum
                    m += s * g
                    p -= lr * m
        # quantization active: W_b vec(B) becomes one real vector
        v = _ternary(Wb, cfg) @ b
        bufs = [np.zeros_like(Wa), np.zeros_like(v), np.zeros_like(Wc)]
        for ep in range(quant_epochs):
            step = quant_lr * 0.3 ** ep
            order = rng.permutation(n)
            for i in range(0, n, batch_size):
                idx = order[i:i + batch_size]
                x, y = a[idx], c[idx]
                wa, wc = _ternary(Wa, cfg), _ternary(Wc, cfg)
                u = x @ wa.T
                z = u * v
                d = 2 * (z @ wc.T - y) / len(idx)
                dz = d @ wc
                grads = [(dz * v).T @ x, (dz * u).sum(0), d.T @ z]
                if not all(np.isfinite(g).all() for g in grads):
                    return None
                for p, g, m in zip((Wa, v, Wc), grads, bufs):
                    m *= momentum
                    m += g
                    p -= step * m
    wa, wc = _ternary(Wa, cfg), _ternary(Wc, cfg)
    pred = ((a @ wa.T) * v) @ wc.T
    loss = float(((pred - c) ** 2).sum(1).mean())
    ta = ternary_quantize(Wa, cfg).entries.astype(np.float64)
    tc = ternary_quantize(Wc, cfg).entries.astype(np.float64)
    return ta, tc, loss


def _data_loss(ta, tc, a, c) -> float:
    h = ta.shape[0]
    X = (tc[None, :, :] * (a @ ta.T)[:, None, :]).reshape(-1, h)
    v = np.linalg.lstsq(X, c.reshape(-1), rcond=None)[0]
    return float(((X @ v - c.reshape(-1)) ** 2).reshape(len(a), -1).sum(1).mean())


def sensitivity_experiment(filt, h_list: Sequence[int], num_pairs: int = 10_000, seed: int = 0,
                           fp_epochs: int = 1, quant_epochs: int = 3, lr: float = 0.1,
                           quant_lr: float = 0.01, momentum: float = 0.9, batch_size: int = 4,
                           clip: float = 1.0, restarts: int = 4, kicks: int = 30,
                           quantizer: QuantizerConfig = QuantizerConfig()) -> list[SensitivityPoint]:
    """Converged L2 loss of an SPN computing ``A @ filt`` for each hidden width.

    ``A`` is uniform on [-1, 1]; ``filt`` is a fixed 2x2 operand on the B side.
    Training follows the full-precision / quantization-active recipe; once
    quantized, ``W_b vec(B)`` is a single real vector, which is fitted in closed
    form while the ternary patterns of ``W_a``/``W_c`` are refined term by term.
    Each width also tries the previous width's structure plus one term, so the
    converged losses cannot increase with ``h``. ``restarts`` extra random
    ternary structures are refined as well, the best result is further
    improved by ``kicks`` rounds of perturb-and-refine, and kept.
    """
    B = np.asarray(filt, dtype=np.float64)
    if B.shape != (2, 2):
        raise ValueError(f"filter must be 2x2, got {B.shape}")
    hs = [int(h) for h in h_list]
    if not hs:
        raise ValueError("h_list is empty")
    if any(h < 1 or h != hh for h, hh in zip(hs, h_list)):
        raise ValueError("hidden widths must be positive integers")
    if num_pairs < batch_size:
        raise ValueError("need at least one batch of pairs")
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (num_pairs, 2, 2))
    a = A.reshape(num_pairs, 4)
    c = (A @ B).reshape(num_pairs, 4)
    b = B.reshape(4)
    st = _Stats(a.T @ a / num_pairs, a.T @ c / num_pairs, float((c * c).sum() / num_pairs))
    results: dict[int, SensitivityPoint] = {}
    prev = None
    for h in sorted(set(hs)):
        hrng = np.random.default_rng([seed, h])
        trained = _sgd_phase(a, c, b, h, hrng, quantizer, fp_epochs, quant_epochs, lr, quant_lr, momentum,
                             batch_size, clip)
        starts = [(ternary_quantize(hrng.uniform(-1, 1, (h, 4)), quantizer).entries.astype(np.float64),
                   ternary_quantize(hrng.uniform(-1, 1, (4, h)), quantizer).entries.astype(np.float64))
                  for _ in range(restarts)]
        if trained is not None:
            starts.append(trained[:2])
        starts.append(_extend(np.zeros((0, 4)), np.zeros((4, 0)), h, st))
        if prev is not None:
            starts.append(_extend(prev[0], prev[1], h, st))
        best = None
        for ta, tc in starts:
            pa, pc, loss = _polish(ta, tc, st)
            if best is None or loss < best[2]:
                best = (pa, pc, loss)
        best = _kick_search(*best, st, hrng, kicks)
        prev = best
        results[h] = SensitivityPoint(h, _data_loss(best[0], best[1], a, c),
                                      trained[2] if trained is not None else float("nan"),
                                      diverged=trained is None)
    return [results[h] for h in hs]


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------

HIST_BINS = 32


class DriftError(ValueError):
    pass


@dataclass
class DriftReport:
    distances: dict                    # layer name -> list of per-filter L2 distances
    mean: float
    std: float
    skewness: float
    excess_kurtosis: float
    histogram: list                    # 32 counts
    bin_edges: list                    # 33 edges from 0 to the largest distance
    per_layer: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"distances": self.distances, "mean": self.mean, "std": self.std, "skewness": self.skewness,
                "excess_kurtosis": self.excess_kurtosis, "histogram": self.histogram,
                "bin_edges": self.bin_edges, "per_layer": self.per_layer}


def _as_network(x) -> Network:
    if isinstance(x, Network):
        return x
    if isinstance(x, Checkpoint):
        return x.network
    if isinstance(x, (str, Path)):
        return load_checkpoint(x).network
    raise TypeError(f"cannot read a network from {type(x).__name__}")


def _fp_filters(net: Network) -> dict:
    return {name: m.fp_filters.data for name, m in net.modules()
            if isinstance(m, HybridBankLayer) and m.fp_filters is not None}


def _moments(d: np.ndarray) -> tuple[float, float, float, float]:
    if d.size == 0:
        return (float("nan"),) * 4
    if d.size < 2 or np.all(d == d[0]):
        return float(d.mean()), float(d.std()), 0.0, 0.0
    return (float(d.mean()), float(d.std()), float(stats.skew(d)), float(stats.kurtosis(d, fisher=True)))


def drift_analysis(before, after) -> DriftReport:
    """Per-filter L2 distance between the full-precision filters of two snapshots."""
    nb, na = _as_network(before), _as_network(after)
    if nb.spec != na.spec or nb.plan != na.plan:
        raise DriftError("snapshots have different architectures or quantization plans")
    fb, fa = _fp_filters(nb), _fp_filters(na)
    if not fb:
        raise DriftError("no hybrid full-precision filters to compare (plan has no hybrid bank layers)")
    if fb.keys() != fa.keys():
        raise DriftError("snapshots disagree on which layers hold full-precision filters")
    distances, per_layer = {}, {}
    for name in fb:
        if fb[name].shape != fa[name].shape:
            raise DriftError(f"{name}: filter shapes differ")
        diff = (fa[name].astype(np.float64) - fb[name].astype(np.float64)).reshape(len(fb[name]), -1)
        d = np.sqrt((diff * diff).sum(1))
        distances[name] = d.tolist()
        m = _moments(d)
        per_layer[name] = {"mean": m[0], "std": m[1], "skewness": m[2], "excess_kurtosis": m[3]}
    allv = np.concatenate([np.asarray(v) for v in distances.values()]) if distances else np.zeros(0)
    top = float(allv.max()) if allv.size and allv.max() > 0 else 1.0
    hist, edges = np.histogram(allv, bins=HIST_BINS, range=(0.0, top))
    mean, std, skew, kurt = _moments(allv)
    return DriftReport(distances, mean, std, skew, kurt, hist.tolist(), edges.tolist(), per_layer)
