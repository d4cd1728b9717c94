"""Differentiable operations over :class:`~edd.core.tensor.Tensor`.

Layout conventions: dense inputs are ``[batch, features]``, images and feature
maps are ``[batch, channels, height, width]``, kernels are
``[out_channels, in_channels, kh, kw]``.
"""
from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, from_op

LOG_EPS = 1e-12

_kink_log: list[bytes] | None = None


@contextlib.contextmanager
def trace_kinks():
    """Collect the activation pattern of every ReLU / max-pool evaluated inside the block."""
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return from_op(out, (a, b), bw, "add")


def scale(a: Tensor, c: float) -> Tensor:
    return from_op(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,), "scale")


def add_n(terms: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors, accumulated in float64."""
    if not terms:
        raise ValueError("add_n needs at least one term")
    shape = terms[0].shape
    for t in terms:
        if t.shape != shape:
            raise ShapeError("add_n", shape, t.shape)
    acc = np.zeros(shape, dtype=np.float64)
    for t in terms:
        acc += t.data
    out = acc.astype(terms[0].dtype)
    return from_op(out, terms, lambda g: [g] * len(terms), "add_n")


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)
    return from_op(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return from_op(a.data @ b.data, (a, b), bw, "matmul")


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``out[b, o] = sum_i x[b, i] * weights[i, o] + bias[o]``."""
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError("dense", x.shape, weights.shape)
    if bias.shape != (weights.shape[1],):
        raise ShapeError("dense", weights.shape, bias.shape, detail="bias length must equal output width")
    out = x.data @ weights.data + bias.data

    def bw(g):
        gx = g @ weights.data.T if x.requires_grad else None
        gw = x.data.T @ g if weights.requires_grad else None
        gb = g.sum(axis=0, dtype=np.float64) if bias.requires_grad else None
        return gx, gw, gb

    return from_op(out, (x, weights, bias), bw, "dense")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) cross-correlation."""
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError("conv2d", x.shape, kernels.shape, detail="expected 4-d input and kernels")
    B, C, H, W = x.shape
    O, Ck, kh, kw = kernels.shape
    if C != Ck:
        raise ShapeError("conv2d", x.shape, kernels.shape, detail="channel mismatch")
    if kh > H or kw > W:
        raise ShapeError("conv2d", x.shape, kernels.shape, detail="kernel larger than input")
    if bias.shape != (O,):
        raise ShapeError("conv2d", kernels.shape, bias.shape, detail="bias length must equal out channels")
    if int(stride) != stride or stride < 1:
        raise ValueError(f"conv2d: stride must be a positive integer, got {stride}")
    s = int(stride)
    OH = (H - kh) // s + 1
    OW = (W - kw) // s + 1

    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]  # B,C,OH,OW,kh,kw
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * OH * OW, C * kh * kw)
    kmat = kernels.data.reshape(O, C * kh * kw)
    out = (cols @ kmat.T).reshape(B, OH, OW, O).transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * OH * OW, O)
        gk = (gmat.T @ cols).reshape(O, C, kh, kw) if kernels.requires_grad else None
        gb = g.sum(axis=(0, 2, 3), dtype=np.float64) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gmat @ kmat).reshape(B, OH, OW, C, kh, kw)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + s * (OH - 1) + 1 : s, j : j + s * (OW - 1) + 1 : s] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
        return gx, gk, gb

    return from_op(out, (x, kernels, bias), bw, "conv2d")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    if x.data.ndim != 4:
        raise ShapeError("max_pool2d", x.shape, detail="expected 4-d input")
    B, C, H, W = x.shape
    k = int(size)
    if k < 1 or k > H or k > W:
        raise ShapeError("max_pool2d", x.shape, (k, k), detail="window larger than input")
    Ho, Wo = H // k, W // k
    xc = x.data[:, :, : Ho * k, : Wo * k]
    win = xc.reshape(B, C, Ho, k, Wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, k * k)
    idx = win.argmax(axis=-1)
    if _kink_log is not None:
        _kink_log.append(idx.tobytes())
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros((B, C, Ho, Wo, k * k), dtype=x.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, : Ho * k, : Wo * k] = gw.reshape(B, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(
            B, C, Ho * k, Wo * k
        )
        return (gx,)

    return from_op(np.ascontiguousarray(out), (x,), bw, "max_pool2d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _kink_log is not None:
        _kink_log.append(np.packbits(mask).tobytes())
    # np.maximum propagates NaN, so a diverged input is not silently zeroed
    return from_op(np.maximum(x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    return from_op(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts]) from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        return np.split(g, bounds, axis=axis)

    return from_op(out, parts, bw, "concat")


def select_rows(mask, a: Tensor, b: Tensor) -> Tensor:
    """Row ``i`` of ``a`` where ``mask[i]`` else row ``i`` of ``b``."""
    if a.shape != b.shape:
        raise ShapeError("select_rows", a.shape, b.shape)
    m = np.asarray(mask, dtype=bool).reshape((-1,) + (1,) * (a.data.ndim - 1))
    out = np.where(m, a.data, b.data).astype(a.dtype)
    return from_op(out, (a, b), lambda g: (g * m, g * ~m), "select_rows")


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax over the last axis with max subtraction."""
    if logits.data.ndim < 1 or logits.shape[-1] < 1:
        raise ShapeError("softmax", logits.shape, detail="need at least one category")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = (e / e.sum(axis=-1, keepdims=True, dtype=np.float64)).astype(logits.dtype)

    def bw(g):
        dot = (g * p).sum(axis=-1, keepdims=True, dtype=np.float64)
        return (p * (g - dot)).astype(logits.dtype),

    return from_op(p, (logits,), bw, "softmax")


def _target_indices(target: np.ndarray, n: int) -> np.ndarray:
    t = np.asarray(target)
    if t.ndim != 2 or t.shape[1] != n:
        raise ShapeError("cross_entropy", t.shape, (t.shape[0] if t.ndim else 0, n), detail="target must be [batch, n]")
    is_binary = np.all((t == 0) | (t == 1))
    if not is_binary or not np.all(t.sum(axis=1) == 1):
        raise ValueError("cross_entropy: target rows must be exact one-hot vectors")
    return t.argmax(axis=1)


def cross_entropy(
    pred: Tensor,
    target,
    mask=None,
    reduction: str = "mean",
    eps: float = LOG_EPS,
) -> Tensor:
    """Negative log-likelihood of one-hot targets under distribution rows.

    ``target`` is a one-hot array ``[batch, n]``. ``mask`` (bool ``[batch]``)
    zeroes the contribution of excluded rows; with ``reduction="mean"`` the
    sum is still divided by the full batch size, so masked rows count as an
    absent factor rather than shrinking the denominator. The log argument is
    clamped at ``eps``. The loss itself is always float64.
    """
    if pred.data.ndim != 2:
        raise ShapeError("cross_entropy", pred.shape, detail="pred must be [batch, n]")
    B, n = pred.shape
    t_arr = np.asarray(target.data if isinstance(target, Tensor) else target)
    if t_arr.shape != (B, n):
        raise ShapeError("cross_entropy", pred.shape, t_arr.shape)
    m = np.ones(B, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != (B,):
        raise ShapeError("cross_entropy", pred.shape, m.shape, detail="mask must be [batch]")
    # masked rows may carry placeholder targets (e.g. free-attribute samples)
    idx = np.zeros(B, dtype=np.int64)
    if m.any():
        idx[m] = _target_indices(t_arr[m], n)
    rows = np.arange(B)
    p_t = pred.data[rows, idx].astype(np.float64)
    clamped = np.maximum(p_t, eps)
    per = np.where(m, -np.log(clamped), 0.0)

    if reduction == "mean":
        out = np.asarray(per.sum() / B)
        w = m / B
    elif reduction == "sum":
        out = np.asarray(per.sum())
        w = m.astype(np.float64)
    elif reduction == "none":
        out = per
        w = None
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def bw(g):
        coef = (w * g) if w is not None else (g * m)
        gp = np.zeros_like(pred.data)
        gp[rows, idx] = np.where(p_t > eps, -coef / clamped, 0.0)
        return (gp,)

    return from_op(np.asarray(out, dtype=np.float64), (pred,), bw, "cross_entropy")
