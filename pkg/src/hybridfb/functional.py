"""Differentiable operations on :class:`~hybridfb.tensor.Tensor`.

Convolutions go through an explicit im2col lowering so that a convolution is
literally a GEMM against a patch matrix. All kernels use cross-correlation
(no kernel flip).
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor


def _t(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


elementwise_mul = mul


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data

    def backward(g):
        return (-g * out * out,)

    return Tensor._from_op(out, (a,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (out > 0),)

    return Tensor._from_op(out, (x,), backward)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g):
        return (2 * g * x.data,)

    return Tensor._from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward)


def getitem(x: Tensor, index) -> Tensor:
    out = np.array(x.data[index], copy=True)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(out, (x,), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return Tensor._from_op(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tensors, backward)


def concat_channels(x: Tensor, y: Tensor) -> Tensor:
    """Join two NCHW maps along channels; ``x`` occupies the leading block."""
    if x.ndim != 4 or y.ndim != 4:
        raise ValueError("concat_channels expects NCHW tensors")
    if x.shape[0] != y.shape[0] or x.shape[2:] != y.shape[2:]:
        raise ValueError(f"non-channel extents differ: {x.shape} vs {y.shape}")
    return concat([x, y], axis=1)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = _t(a), _t(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner extents disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape [out, in]."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense: input features {x.shape[-1]} != weight in {weight.shape[1]}")
    y = matmul(x, transpose(weight))
    return add(y, bias) if bias is not None else y


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    if k < 1 or stride < 1 or padding < 0:
        raise ValueError(f"invalid conv geometry k={k} stride={stride} padding={padding}")
    out = (size + 2 * padding - k) // stride + 1
    if out < 1:
        raise ValueError(f"non-positive output extent for size={size}, k={k}, "
                         f"stride={stride}, padding={padding}")
    return out


def _im2col_rows(x: np.ndarray, k: int, stride: int, padding: int):
    """Patch matrix laid out as [C*k*k, N*Ho*Wo] (channel-major rows)."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * k * k, n * ho * wo), ho, wo


def _col2im_rows(cols: np.ndarray, shape, k: int, stride: int, padding: int, ho: int, wo: int):
    n, c, h, w = shape
    cols = cols.reshape(c, k, k, n, ho, wo)
    xp = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    xp = xp.transpose(1, 0, 2, 3)
    if padding:
        xp = xp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(xp)


def im2col(x: Tensor, k: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Unfold an NCHW tensor into patches of shape [N, C*k*k, Ho*Wo].

    Row ordering within a patch is (channel, kernel row, kernel column), the
    same order as ``weight.reshape(C_out, -1)``.
    """
    n = x.shape[0]
    rows, ho, wo = _im2col_rows(x.data, k, stride, padding)
    out = np.ascontiguousarray(rows.reshape(-1, n, ho * wo).transpose(1, 0, 2))

    def backward(g):
        r = g.transpose(1, 0, 2).reshape(-1, n * ho * wo)
        return (_col2im_rows(r, x.shape, k, stride, padding, ho, wo),)

    return Tensor._from_op(out, (x,), backward)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, input [N,C,H,W], weight [C_out,C,k,k]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise ValueError("only square kernels are supported")
    if x.shape[1] != c_in:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, weight expects {c_in}")
    n = x.shape[0]
    cols, ho, wo = _im2col_rows(x.data, k, stride, padding)
    wm = weight.data.reshape(c_out, -1)
    out = (wm @ cols).reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(c_out, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = _col2im_rows(wm.T @ g2, x.shape, k, stride, padding, ho, wo)
        return gx, gw

    return Tensor._from_op(np.ascontiguousarray(out), (x, weight), backward)


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel 2-D cross-correlation, weight [C,1,k,k]."""
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != 1:
        raise ValueError("depthwise_conv2d expects input [N,C,H,W] and weight [C,1,k,k]")
    n, c, h, w = x.shape
    if weight.shape[0] != c:
        raise ValueError(f"depthwise: {c} input channels vs {weight.shape[0]} filters")
    k = weight.shape[2]
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wk = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x.dtype, weight.dtype))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] * wk[None, :, i, j, None, None]

    def backward(g):
        gw = np.zeros_like(weight.data) if weight.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + stride * ho, stride),
                      slice(j, j + stride * wo, stride))
                if gw is not None:
                    gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
                if gxp is not None:
                    gxp[sl] += g * wk[None, :, i, j, None, None]
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            gx = np.ascontiguousarray(gx)
        return gx, gw

    return Tensor._from_op(out, (x, weight), backward)


# ---------------------------------------------------------------------------
# normalisation and pooling
# ---------------------------------------------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.1,
              eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation over an NCHW tensor.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place; in eval mode the running statistics
    are used and treated as constants.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm parameters must have shape ({c},)")
    shp = (1, c, 1, 1)
    if training:
        axes = (0, 2, 3)
        m = x.size // c
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    out = (xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)).astype(x.dtype, copy=False)

    def backward(g):
        sum_gx = np.einsum("nchw,nchw->c", g, xhat)
        sum_g = g.sum(axis=(0, 2, 3))
        gg = sum_gx if gamma.requires_grad else None
        gb = sum_g if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            scale = (gamma.data * inv).reshape(shp)
            if training:
                m = g.size // c
                gx = (g - (sum_g / m).reshape(shp) - xhat * (sum_gx / m).reshape(shp)) * scale
            else:
                gx = g * scale
            gx = gx.astype(x.dtype, copy=False)
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C]."""
    return mean(x, axis=(2, 3))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy softmax (no tape)."""
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError("label out of range")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1
    return mul(sum(mul(log_softmax(logits), onehot)), -1.0 / n)


def soft_cross_entropy(logits: Tensor, target_probs: np.ndarray) -> Tensor:
    """Mean over rows of ``-sum(p * log softmax(logits))`` for a fixed ``p``."""
    if logits.shape != target_probs.shape:
        raise ValueError("logits and target probabilities disagree in shape")
    p = np.asarray(target_probs, dtype=logits.dtype)
    return mul(sum(mul(log_softmax(logits), p)), -1.0 / logits.shape[0])


def mse(pred: Tensor, target) -> Tensor:
    """Mean over rows of the squared L2 error (rows along axis 0)."""
    d = sub(pred, target)
    return mul(sum(square(d)), 1.0 / pred.shape[0])
