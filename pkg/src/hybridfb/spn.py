"""Sum-product-network (SPN) realisations of matrix products and convolutions.

An SPN computes ``vec(C) = W_c [(W_b vec(B)) * (W_a vec(A))]`` with ternary
``W_a``, ``W_b`` (h rows) and ``W_c`` (h columns): two addition-only linear
stages around ``h`` elementwise multiplications. All vectorisations here are
row-major.

In a strassenified convolution ``A`` holds the layer filters and ``B`` one
im2col patch, so ``W_a vec(A)`` does not depend on the input and is folded
into a real vector ``a_hat`` once training has fixed it.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Optional, Union

import numpy as np

from . import functional as F
from .quant import QuantizerConfig, TernaryMatrix, ste_ternary, ternary_quantize
from .tensor import Tensor, parameter

MatrixLike = Union[TernaryMatrix, Tensor, np.ndarray]


class SpnTriple(NamedTuple):
    W_a: TernaryMatrix
    W_b: TernaryMatrix
    W_c: TernaryMatrix

    @property
    def hidden(self) -> int:
        return self.W_a.rows


def _as_tensor(m: MatrixLike, dtype=None) -> Tensor:
    if isinstance(m, TernaryMatrix):
        return m.tensor(dtype or np.float64)
    if isinstance(m, Tensor):
        return m
    return Tensor(np.asarray(m, dtype=dtype or np.float64))


def _as_array(m: MatrixLike) -> np.ndarray:
    if isinstance(m, TernaryMatrix):
        return m.dense()
    if isinstance(m, Tensor):
        return m.data
    return np.asarray(m, dtype=np.float64)


# ---------------------------------------------------------------------------
# SPN evaluation
# ---------------------------------------------------------------------------

def spn_bilinear(W_a: MatrixLike, W_b: MatrixLike, W_c: MatrixLike, xa: Tensor, xb: Tensor) -> Tensor:
    """Batched SPN: rows of ``xa`` [N, n_a] and ``xb`` [N, n_b] -> [N, n_c]."""
    wa, wb, wc = (_as_tensor(m, xa.dtype) for m in (W_a, W_b, W_c))
    _check_dims(wa.shape, wb.shape, wc.shape, xa.shape[-1], xb.shape[-1])
    hidden = F.mul(F.matmul(xb, F.transpose(wb)), F.matmul(xa, F.transpose(wa)))
    return F.matmul(hidden, F.transpose(wc))


def _check_dims(sa, sb, sc, na, nb):
    if sa[1] != na:
        raise ValueError(f"W_a has {sa[1]} columns but vec(A) has {na} entries")
    if sb[1] != nb:
        raise ValueError(f"W_b has {sb[1]} columns but vec(B) has {nb} entries")
    if not sa[0] == sb[0] == sc[1]:
        raise ValueError(f"hidden widths disagree: W_a {sa}, W_b {sb}, W_c {sc}")


def spn_matmul(W_a: MatrixLike, W_b: MatrixLike, W_c: MatrixLike, A, B, out_shape=None) -> Tensor:
    """Evaluate the SPN on matrices ``A`` and ``B``; result has ``out_shape``.

    ``out_shape`` defaults to ``(A.rows, B.cols)`` for 2-D operands.
    """
    A = A if isinstance(A, Tensor) else Tensor(np.asarray(A, dtype=np.float64))
    B = B if isinstance(B, Tensor) else Tensor(np.asarray(B, dtype=np.float64))
    if out_shape is None:
        out_shape = (A.shape[0], B.shape[-1]) if A.ndim == 2 and B.ndim == 2 else (-1,)
    va = F.reshape(A, (1, A.size))
    vb = F.reshape(B, (1, B.size))
    return F.reshape(spn_bilinear(W_a, W_b, W_c, va, vb), out_shape)


def spn_reference_counted(W_a: TernaryMatrix, W_b: TernaryMatrix, W_c: TernaryMatrix,
                          a_vec, b_vec) -> tuple[np.ndarray, int, int]:
    """Scalar reference evaluation returning ``(vec(C), mults, adds)``.

    Ternary stages are applied with additions/subtractions only; the hidden
    elementwise product and the (at most three) per-matrix scales are the only
    multiplications. With unit scales the count is exactly ``h``.
    """
    mults = adds = 0

    def ternary_apply(tm: TernaryMatrix, x):
        nonlocal mults, adds
        out = []
        for row in tm.entries:
            acc, first = 0.0, True
            for e, v in zip(row, x):
                if e == 0:
                    continue
                term = v if e > 0 else -v
                if first:
                    acc, first = term, False
                else:
                    acc += term
                    adds += 1
            if tm.scale != 1.0:
                acc *= tm.scale
                mults += 1
            out.append(acc)
        return out

    pa = ternary_apply(W_a, list(np.asarray(a_vec, dtype=np.float64).ravel()))
    pb = ternary_apply(W_b, list(np.asarray(b_vec, dtype=np.float64).ravel()))
    prod = []
    for x, y in zip(pb, pa):
        prod.append(x * y)
        mults += 1
    return np.array(ternary_apply(W_c, prod)), mults, adds


# ---------------------------------------------------------------------------
# bilinear maps and exactness
# ---------------------------------------------------------------------------

def matmul_bilinear_map(m: int = 2, k: int = 2, n: int = 2) -> np.ndarray:
    """Tensor ``T[c, a, b]`` of the product of an m x k and a k x n matrix."""
    T = np.zeros((m * n, m * k, k * n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                T[i * n + j, i * k + p, p * n + j] = 1
    return T


def spn_tensor(W_a: MatrixLike, W_b: MatrixLike, W_c: MatrixLike) -> np.ndarray:
    """Bilinear-map tensor realised by an SPN (used for diagnostics)."""
    a, b, c = _as_array(W_a), _as_array(W_b), _as_array(W_c)
    return np.einsum("ct,ta,tb->cab", c, a, b)


def verify_spn_exact(spn, reference: Union[np.ndarray, Callable], atol: float = 0.0) -> bool:
    """Check an SPN against a bilinear map on every basis pair (e_i, e_j).

    A bilinear map is determined by its values on basis pairs, so agreement
    there implies agreement everywhere. ``reference`` is either the map's
    tensor ``T[c, a, b]`` or a callable ``f(x_a, x_b) -> vec(C)``.
    """
    W_a, W_b, W_c = spn
    na, nb = _as_array(W_a).shape[1], _as_array(W_b).shape[1]
    if callable(reference):
        ref = lambda i, j: np.asarray(reference(np.eye(na)[i], np.eye(nb)[j]), dtype=np.float64)  # noqa: E731
    else:
        T = np.asarray(reference, dtype=np.float64)
        if T.shape[1:] != (na, nb):
            raise ValueError(f"reference map has input dims {T.shape[1:]}, SPN has {(na, nb)}")
        ref = lambda i, j: T[:, i, j]  # noqa: E731
    eye_a, eye_b = np.eye(na), np.eye(nb)
    out = spn_bilinear(W_a, W_b, W_c, Tensor(eye_a.repeat(nb, axis=0)), Tensor(np.tile(eye_b, (na, 1)))).data
    for i in range(na):
        for j in range(nb):
            r = ref(i, j)
            if r.shape != out[i * nb + j].shape:
                raise ValueError("reference output dimension does not match W_c rows")
            if np.abs(out[i * nb + j] - r).max() > atol:
                return False
    return True


_STRASSEN_A = [[1, 0, 0, 1], [0, 0, 1, 1], [1, 0, 0, 0], [0, 0, 0, 1],
               [1, 1, 0, 0], [-1, 0, 1, 0], [0, 1, 0, -1]]
_STRASSEN_B = [[1, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, -1], [-1, 0, 1, 0],
               [0, 0, 0, 1], [1, 1, 0, 0], [0, 0, 1, 1]]
_STRASSEN_C = [[1, 0, 0, 1, -1, 0, 1],
               [0, 0, 1, 0, 1, 0, 0],
               [0, 1, 0, 1, 0, 0, 0],
               [1, -1, 1, 0, 0, 1, 0]]


def make_canonical_strassen() -> SpnTriple:
    """Strassen's 7-multiplication 2x2 product as a ternary SPN triple."""
    triple = SpnTriple(TernaryMatrix(np.array(_STRASSEN_A)), TernaryMatrix(np.array(_STRASSEN_B)),
                       TernaryMatrix(np.array(_STRASSEN_C)))
    if not verify_spn_exact(triple, matmul_bilinear_map(2, 2, 2)):
        raise AssertionError("Strassen constants failed verification")
    return triple


def naive_matmul_triple(m: int = 2, k: int = 2, n: int = 2) -> SpnTriple:
    """One hidden unit per (i, p, j) term; h = m*k*n (8 for 2x2)."""
    h = m * k * n
    wa = np.zeros((h, m * k), dtype=np.int8)
    wb = np.zeros((h, k * n), dtype=np.int8)
    wc = np.zeros((m * n, h), dtype=np.int8)
    t = 0
    for i in range(m):
        for j in range(n):
            for p in range(k):
                wa[t, i * k + p] = 1
                wb[t, p * n + j] = 1
                wc[i * n + j, t] = 1
                t += 1
    return SpnTriple(TernaryMatrix(wa), TernaryMatrix(wb), TernaryMatrix(wc))


# ---------------------------------------------------------------------------
# shared-value search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterBankTemplate:
    """Maps ``p`` free filter values onto vec(A) of a 2x2 filter bank.

    Row ``i`` of the bank is filter ``i``; ``embedding`` is [4, p] with one 1
    per row selecting which free value fills that position.
    """

    embedding: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        e = np.asarray(self.embedding)
        if e.ndim != 2 or e.shape[0] != 4 or e.shape[1] < 1:
            raise ValueError("template embedding must be [4, p]")
        if not (np.isin(e, (0, 1)).all() and (e.sum(axis=1) == 1).all()):
            raise ValueError("each vec(A) position must take exactly one free value")
        if (e.sum(axis=0) == 0).any():
            raise ValueError("every free value must appear in the filter bank")

    @property
    def n_free(self) -> int:
        return self.embedding.shape[1]

    def bilinear_map(self) -> np.ndarray:
        """Tensor of (free values, vec(B)) -> vec(A B)."""
        return np.einsum("cab,ap->cpb", matmul_bilinear_map(2, 2, 2), self.embedding)

    def lift(self, W_free: np.ndarray) -> np.ndarray:
        """Turn an h x p matrix on free values into an h x 4 matrix on vec(A)."""
        out = np.zeros((W_free.shape[0], 4), dtype=W_free.dtype)
        for p in range(self.n_free):
            out[:, int(np.argmax(self.embedding[:, p]))] = W_free[:, p]
        return out


def generic_template() -> FilterBankTemplate:
    """Two filters [a, b] and [c, d] with no common values."""
    return FilterBankTemplate(np.eye(4, dtype=np.int64), "generic")


def shared_value_template() -> FilterBankTemplate:
    """Filters [a, b] and [a, c]: the first tap is shared."""
    e = np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0], [0, 0, 1]])
    return FilterBankTemplate(e, "shared")


def _round_balanced(wa: np.ndarray, wb: np.ndarray, wc: np.ndarray):
    """Rescale every hidden unit so its W_a/W_b rows peak at 1, then round."""
    wa, wb, wc = wa.copy(), wb.copy(), wc.copy()
    for t in range(wa.shape[0]):
        sa = np.abs(wa[t]).max()
        sb = np.abs(wb[t]).max()
        if sa < 1e-8 or sb < 1e-8:
            wa[t] = wb[t] = 0
            wc[:, t] = 0
            continue
        wa[t] /= sa
        wb[t] /= sb
        wc[:, t] *= sa * sb
    r = lambda x: np.clip(np.rint(x), -1, 1).astype(np.int8)  # noqa: E731
    return r(wa), r(wb), r(wc)


def _refit_output(T: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> np.ndarray:
    """Least-squares W_c for fixed ternary W_a, W_b (the map is linear in W_c), rounded."""
    design = np.einsum("ta,tb->abt", wa.astype(np.float64), wb.astype(np.float64)).reshape(-1, wa.shape[0])
    target = T.reshape(T.shape[0], -1).T
    wc, *_ = np.linalg.lstsq(design, target, rcond=None)
    return np.clip(np.rint(wc.T), -1, 1).astype(np.int8)


def _refit_input(T: np.ndarray, w_other: np.ndarray, wc: np.ndarray, side: str) -> np.ndarray:
    """Least-squares W_a (``side='a'``) or W_b for the other two factors fixed, rounded."""
    Tm = T if side == "a" else T.transpose(0, 2, 1)
    h, n_self = w_other.shape[0], Tm.shape[1]
    # T[c, i, j] = sum_t wc[c, t] * W[t, i] * other[t, j]; unknowns W[t, i]
    design = np.einsum("ct,tj->cjt", wc.astype(np.float64), w_other.astype(np.float64)).reshape(-1, h)
    target = Tm.transpose(0, 2, 1).reshape(-1, n_self)
    w, *_ = np.linalg.lstsq(design, target, rcond=None)
    return np.clip(np.rint(w), -1, 1).astype(np.int8)


def _alternating_refits(T: np.ndarray, wa, wb, wc, rounds: int = 3):
    """Candidate ternary triples from alternating rounded least-squares refits."""
    yield wa, wb, wc
    for _ in range(rounds):
        wc = _refit_output(T, wa, wb)
        yield wa, wb, wc
        wa = _refit_input(T, wb, wc, "a")
        yield wa, wb, wc
        wb = _refit_input(T, wa, wc, "b")
        yield wa, wb, wc


def _fit_spn(T: np.ndarray, h: int, rng: np.random.Generator, steps: int, batch: int,
             lr: float, l1: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train a real SPN against random instantiations of the map ``T``."""
    nc, na, nb = T.shape
    wa = parameter(rng.uniform(-1, 1, (h, na)), dtype=np.float64)
    wb = parameter(rng.uniform(-1, 1, (h, nb)), dtype=np.float64)
    wc = parameter(rng.uniform(-1, 1, (nc, h)), dtype=np.float64)
    params = [wa, wb, wc]
    m = [np.zeros_like(p.data) for p in params]
    v = [np.zeros_like(p.data) for p in params]
    b1, b2 = 0.9, 0.999
    for step in range(1, steps + 1):
        xa = rng.standard_normal((batch, na))
        xb = rng.standard_normal((batch, nb))
        target = np.einsum("cab,na,nb->nc", T, xa, xb)
        pred = spn_bilinear(wa, wb, wc, Tensor(xa), Tensor(xb))
        # sparsity pressure switches on after a plain fitting stage
        lam = l1 if step > steps // 3 else 0.0
        for p in params:
            p.grad = None
        F.mse(pred, target).backward()
        for i, p in enumerate(params):
            g = p.grad + lam * np.sign(p.data)
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mh = m[i] / (1 - b1 ** step)
            vh = v[i] / (1 - b2 ** step)
            p.data -= lr * mh / (np.sqrt(vh) + 1e-8)
    return wa.data, wb.data, wc.data


def iter_shared_value_trials(template: FilterBankTemplate, h: int, trials: int = 20, seed: int = 0,
                             steps: int = 3000, batch: int = 32, lr: float = 0.01,
                             l1: float = 1e-3) -> Iterator[Optional[SpnTriple]]:
    """Yield one result per search trial: a verified exact triple or ``None``.

    Each trial trains a real SPN on random instantiations of the template,
    balances and rounds it to ternary (refining the rounding by alternating
    least-squares refits of each factor), and accepts it only if basis
    verification against the template's bilinear map passes; a further check
    on random integer instantiations guards the lifted triple (entries for
    shared positions are placed on the first occurrence).
    """
    if not isinstance(template, FilterBankTemplate):
        raise TypeError("template must be a FilterBankTemplate")
    if h < 1:
        raise ValueError("hidden width must be at least 1")
    if trials < 0:
        raise ValueError("trial budget must be non-negative")
    T = template.bilinear_map()
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        wa, wb, wc = _round_balanced(*_fit_spn(T, h, rng, steps, batch, lr, l1))
        free = None
        for ca, cb, cc in _alternating_refits(T, wa, wb, wc):
            trial = SpnTriple(TernaryMatrix(ca), TernaryMatrix(cb), TernaryMatrix(cc))
            if np.any(cc) and verify_spn_exact(trial, T):
                free, wa = trial, ca
                break
        if free is None:
            yield None
            continue
        lifted = SpnTriple(TernaryMatrix(template.lift(wa)), free.W_b, free.W_c)
        theta = rng.integers(-9, 10, (16, template.n_free))
        bs = rng.integers(-9, 10, (16, 2, 2))
        ok = all(
            np.array_equal(spn_matmul(*lifted, (template.embedding @ th).reshape(2, 2), b).data,
                           (template.embedding @ th).reshape(2, 2) @ b)
            for th, b in zip(theta, bs)
        )
        yield lifted if ok else None


def search_shared_value_spn(template: FilterBankTemplate, h: int, trials: int = 20, seed: int = 0,
                            **fit) -> Optional[SpnTriple]:
    """First exact ternary SPN of hidden width ``h`` for the filter bank, or ``None``
    once ``trials`` attempts are spent."""
    for found in iter_shared_value_trials(template, h, trials, seed, **fit):
        if found is not None:
            return found
    return None


def count_shared_value_successes(template: FilterBankTemplate, h: int, trials: int = 20, seed: int = 0,
                                 **fit) -> int:
    """Number of trials (out of ``trials``) that produce a verified exact SPN."""
    return sum(found is not None for found in iter_shared_value_trials(template, h, trials, seed, **fit))


# ---------------------------------------------------------------------------
# strassenified layers
# ---------------------------------------------------------------------------

class LifecycleState(str, enum.Enum):
    FULL_PRECISION = "FULL_PRECISION"
    QUANT_ACTIVE = "QUANT_ACTIVE"
    FROZEN_TERNARY = "FROZEN_TERNARY"


class LifecycleError(RuntimeError):
    pass


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape).astype(dtype)


class _SpnCore:
    """Shared state of strassenified conv and dense layers.

    ``filters`` is vec(A) (the layer's own weights, length ``c_out*fan_in``),
    ``W_a`` is [h, len(filters)], ``W_b`` is [h, fan_in] and ``W_c`` is
    [c_out, h]. After :meth:`freeze_and_fold` only ``a_hat`` stays trainable.
    """

    def __init__(self, fan_in: int, c_out: int, hidden: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, quantizer: QuantizerConfig = QuantizerConfig()):
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if c_out < 1 or fan_in < 1:
            raise ValueError("layer extents must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fan_in, self.c_out, self.hidden = fan_in, c_out, hidden
        self.quantizer = quantizer
        self.dtype = np.dtype(dtype)
        self.state = LifecycleState.FULL_PRECISION
        m = c_out * fan_in
        self.filters = parameter(_xavier(rng, (m,), fan_in, c_out, dtype))
        self.W_a = parameter(_xavier(rng, (hidden, m), m, hidden, dtype))
        self.W_b = parameter(_xavier(rng, (hidden, fan_in), fan_in, hidden, dtype))
        self.W_c = parameter(_xavier(rng, (c_out, hidden), hidden, c_out, dtype))
        # unit-variance hidden products keep the effective filter near Xavier scale
        a = self.W_a.data @ self.filters.data
        std = float(a.std()) if a.size > 1 else abs(float(a[0]))
        if std > 0:
            self.filters.data /= std
        self.a_hat: Optional[Tensor] = None
        self.frozen_b: Optional[TernaryMatrix] = None
        self.frozen_c: Optional[TernaryMatrix] = None

    # -- lifecycle ----------------------------------------------------------------
    def activate_quantization(self) -> None:
        if self.state is not LifecycleState.FULL_PRECISION:
            raise LifecycleError(f"cannot activate quantization from {self.state.value}")
        self.state = LifecycleState.QUANT_ACTIVE

    def freeze_and_fold(self) -> None:
        """Fix W_b/W_c to their ternary values and fold every scale into a_hat."""
        if self.state is not LifecycleState.QUANT_ACTIVE:
            raise LifecycleError(f"freeze_and_fold requires QUANT_ACTIVE, layer is {self.state.value}")
        qa = ternary_quantize(self.W_a, self.quantizer)
        qb = ternary_quantize(self.W_b, self.quantizer)
        qc = ternary_quantize(self.W_c, self.quantizer)
        a = qa.dense(np.float64) @ self.filters.data.astype(np.float64)
        self.a_hat = parameter((qb.scale * qc.scale * a).astype(self.dtype))
        self.frozen_b = TernaryMatrix(qb.entries, 1.0, qb.degenerate)
        self.frozen_c = TernaryMatrix(qc.entries, 1.0, qc.degenerate)
        self.W_a = self.W_b = self.W_c = self.filters = None
        self.state = LifecycleState.FROZEN_TERNARY

    # -- views ------------------------------------------------------------------
    def _view(self, w: Tensor) -> Tensor:
        if self.state is LifecycleState.QUANT_ACTIVE:
            return ste_ternary(w, self.quantizer)
        return w

    def hidden_vector(self) -> Tensor:
        """W_a vec(A) (or the folded a_hat), length h."""
        if self.state is LifecycleState.FROZEN_TERNARY:
            return self.a_hat
        wa = self._view(self.W_a)
        return F.reshape(F.matmul(wa, F.reshape(self.filters, (-1, 1))), (self.hidden,))

    def matrices(self) -> tuple[Tensor, Tensor]:
        """(W_b, W_c) as used by the forward pass."""
        if self.state is LifecycleState.FROZEN_TERNARY:
            return (Tensor(self.frozen_b.dense(self.dtype)), Tensor(self.frozen_c.dense(self.dtype)))
        return self._view(self.W_b), self._view(self.W_c)

    def ternary_masters(self) -> list[Tensor]:
        """Real matrices that are (or will be) ternarized."""
        if self.state is LifecycleState.FROZEN_TERNARY:
            return []
        return [self.W_a, self.W_b, self.W_c]

    def parameters(self) -> list[Tensor]:
        if self.state is LifecycleState.FROZEN_TERNARY:
            return [self.a_hat]
        return [self.filters, self.W_a, self.W_b, self.W_c]

    def named_state(self) -> dict:
        """Arrays needed to reconstruct the layer (checkpointing)."""
        if self.state is LifecycleState.FROZEN_TERNARY:
            return {"a_hat": self.a_hat.data, "W_b": self.frozen_b, "W_c": self.frozen_c}
        return {"filters": self.filters.data, "W_a": self.W_a.data, "W_b": self.W_b.data,
                "W_c": self.W_c.data}

    def load_named_state(self, state: LifecycleState, arrays: dict) -> None:
        self.state = LifecycleState(state)
        if self.state is LifecycleState.FROZEN_TERNARY:
            self.a_hat = parameter(np.array(arrays["a_hat"], dtype=self.dtype))
            self.frozen_b, self.frozen_c = arrays["W_b"], arrays["W_c"]
            self.W_a = self.W_b = self.W_c = self.filters = None
        else:
            for key in ("filters", "W_a", "W_b", "W_c"):
                setattr(self, key, parameter(np.array(arrays[key], dtype=self.dtype)))
            self.a_hat = self.frozen_b = self.frozen_c = None


class SpnConvLayer(_SpnCore):
    """Strassenified k x k convolution producing ``c_out`` channels."""

    def __init__(self, c_in: int, c_out: int, k: int, hidden: int, stride: int = 1, padding: int = 0,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32,
                 quantizer: QuantizerConfig = QuantizerConfig()):
        self.c_in, self.k, self.stride, self.padding = c_in, k, stride, padding
        super().__init__(c_in * k * k, c_out, hidden, rng, dtype, quantizer)

    @property
    def c_out_spn(self) -> int:
        return self.c_out

    def forward(self, x: Tensor) -> Tensor:
        return spn_conv2d(self, x)

    __call__ = forward


def spn_conv2d(layer: SpnConvLayer, x: Tensor) -> Tensor:
    """W_b as a k x k conv to h channels, scale by the hidden vector, W_c as 1x1 conv."""
    if x.ndim != 4 or x.shape[1] != layer.c_in:
        raise ValueError(f"spn_conv2d: expected [N,{layer.c_in},H,W], got {x.shape}")
    wb, wc = layer.matrices()
    a = layer.hidden_vector()
    z = F.conv2d(x, F.reshape(wb, (layer.hidden, layer.c_in, layer.k, layer.k)), layer.stride, layer.padding)
    z = F.mul(z, F.reshape(a, (1, layer.hidden, 1, 1)))
    return F.conv2d(z, F.reshape(wc, (layer.c_out, layer.hidden, 1, 1)))


class SpnDenseLayer(_SpnCore):
    """Strassenified fully-connected layer on [N, c_in] inputs."""

    def __init__(self, c_in: int, c_out: int, hidden: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, quantizer: QuantizerConfig = QuantizerConfig()):
        self.c_in = c_in
        super().__init__(c_in, c_out, hidden, rng, dtype, quantizer)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.c_in:
            raise ValueError(f"SpnDenseLayer: expected [N,{self.c_in}], got {x.shape}")
        wb, wc = self.matrices()
        a = self.hidden_vector()
        z = F.mul(F.matmul(x, F.transpose(wb)), F.reshape(a, (1, self.hidden)))
        return F.matmul(z, F.transpose(wc))

    __call__ = forward


def naive_spn_conv_layer(weight: np.ndarray, stride: int = 1, padding: int = 0) -> SpnConvLayer:
    """An exact SpnConvLayer (h = c_out * c_in * k^2) reproducing ``conv2d(., weight)``."""
    weight = np.asarray(weight, dtype=np.float64)
    c_out, c_in, k, _ = weight.shape
    fan_in = c_in * k * k
    h = c_out * fan_in
    layer = SpnConvLayer(c_in, c_out, k, h, stride, padding, dtype=np.float64)
    wa = np.zeros((h, c_out * fan_in))
    wb = np.zeros((h, fan_in))
    wc = np.zeros((c_out, h))
    for o in range(c_out):
        for i in range(fan_in):
            t = o * fan_in + i
            wa[t, t] = 1
            wb[t, i] = 1
            wc[o, t] = 1
    layer.load_named_state(LifecycleState.FULL_PRECISION,
                           {"filters": weight.reshape(-1), "W_a": wa, "W_b": wb, "W_c": wc})
    return layer
