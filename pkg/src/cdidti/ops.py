"""Differentiable operations on :class:`~cdidti.tensor.Tensor`.

Elementwise binary ops follow numpy broadcasting; their backward rules sum the
upstream gradient back over broadcast axes. Matmul accepts stacked operands
(``...×m×k @ ...×k×n``) in the same way.
"""

from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result

__all__ = [
    "add", "sub", "mul", "div", "neg", "matmul", "transpose", "permute", "reshape", "broadcast_to",
    "getitem", "concat", "stack", "sum", "mean", "max", "var", "sqrt", "log", "exp",
    "sigmoid", "relu", "leaky_relu", "softmax", "log_softmax", "layer_norm", "det3",
    "conv1d", "cosine_similarity", "l2_normalize", "masked_fill", "clip_min",
    "quantile", "linear",
]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# Elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


# Linear algebra and shape manipulation

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    with np.errstate(over="ignore", invalid="ignore"):
        out = np.matmul(a.data, b.data)
    return make_result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "permute")


def transpose(a: Tensor, axis1: int = -1, axis2: int = -2) -> Tensor:
    return make_result(
        np.swapaxes(a.data, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),), "transpose"
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return make_result(a.data.reshape(tuple(shape)), (a,), lambda g: (g.reshape(src),), "reshape")


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    return make_result(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, src),), "broadcast")


def getitem(a: Tensor, idx) -> Tensor:
    if isinstance(idx, Tensor):
        raise TypeError("index with numpy arrays, not tensors")

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return make_result(np.array(a.data[idx]), (a,), backward, "slice")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ValueError(f"concat shape mismatch on axis {axis}: {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % (tensors[0].ndim + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=ax), tensors, backward, "stack")


# Reductions

def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        return (np.array(_expand(g, a.shape, axis, keepdims)),)

    return make_result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def backward(g):
        return (_expand(g, a.shape, axis, keepdims) / n,)

    return make_result(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), backward, "mean")


def max(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        res = np.zeros_like(a.data)
        np.put_along_axis(res, np.expand_dims(idx, axis), gk, axis=axis)
        return (res,)

    return make_result(out if keepdims else np.squeeze(out, axis=axis), (a,), backward, "max")


def var(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Population variance (divides by n)."""
    n = a.shape[axis]
    centered = a.data - a.data.mean(axis=axis, keepdims=True)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * 2.0 * centered / n,)

    return make_result(np.mean(centered**2, axis=axis, keepdims=keepdims), (a,), backward, "var")


# Elementwise functions

def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return make_result(out, (a,), lambda g: (g / a.data,), "log")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = out.astype(x.dtype)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return make_result(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope).astype(a.dtype)
    return make_result(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def clip_min(a: Tensor, lo: float) -> Tensor:
    keep = a.data >= lo
    out = np.where(keep, a.data, lo).astype(a.dtype)
    return make_result(out, (a,), lambda g: (g * keep,), "clip_min")


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant; those entries get no gradient."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, a.dtype.type(value), a.data)
    return make_result(out, (a,), lambda g: (np.where(mask, 0, g).astype(g.dtype),), "masked_fill")


# Normalisation

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return make_result(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return make_result(out, (a,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row of the last axis to zero mean / unit variance, then scale and shift."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    xd = x.data
    d = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(((xd - mu) ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = (xd - mu) * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv / d * (d * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return make_result(out.astype(xd.dtype), (x, gain, bias), backward, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale rows to unit L2 norm. Rows with zero norm cannot be normalised and raise."""
    sq = sum(mul(x, x), axis=axis, keepdims=True)
    if np.any(sq.data == 0):
        raise ValueError("l2_normalize: zero-norm row cannot be normalised")
    return div(x, sqrt(sq))


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """``a·b / (|a||b|)`` along ``axis``; the norm product is floored at ``eps``."""
    a, b = _pair(a, b)
    dot = sum(mul(a, b), axis=axis)
    na = sum(mul(a, a), axis=axis)
    nb = sum(mul(b, b), axis=axis)
    denom = sqrt(clip_min(mul(na, nb), eps * eps))
    return div(dot, denom)


# Special-purpose ops

def det3(G: Tensor) -> Tensor:
    """Determinant of stacked 3×3 matrices by cofactor expansion.

    The backward rule multiplies the upstream gradient by the cofactor matrix
    directly, so it stays well defined when ``G`` is singular.
    """
    if G.shape[-2:] != (3, 3):
        raise ValueError(f"det3 needs trailing 3x3 dims, got {G.shape}")
    m = G.data
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    d, e, f = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    gg, h, i = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    c00, c01, c02 = e * i - f * h, -(d * i - f * gg), d * h - e * gg
    out = a * c00 + b * c01 + c * c02

    def backward(gr):
        cof = np.stack(
            [
                np.stack([c00, c01, c02], -1),
                np.stack([-(b * i - c * h), a * i - c * gg, -(a * h - b * gg)], -1),
                np.stack([b * f - c * e, -(a * f - c * d), a * e - b * d], -1),
            ],
            -2,
        )
        return (gr[..., None, None] * cof,)

    return make_result(out, (G,), backward, "det3")


def conv1d(x: Tensor, kernel: Tensor, padding: str = "same") -> Tensor:
    """Sliding-window sum along the sequence axis (-2), zero-padded to keep its length.

    ``kernel`` has shape ``w×d_in×d_out`` with odd ``w``; output position ``s``
    sees inputs ``s-(w-1)/2 .. s+(w-1)/2``.
    """
    w, din, dout = kernel.shape
    if w % 2 == 0:
        raise ValueError(f"conv1d window must be odd, got {w}")
    if padding != "same":
        raise ValueError("only 'same' padding is supported")
    if x.shape[-1] != din:
        raise ValueError(f"conv1d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    p = (w - 1) // 2
    seq = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (0, 0)]
    xp = np.pad(x.data, pad)
    k = kernel.data
    out = builtins.sum(xp[..., j : j + seq, :] @ k[j] for j in range(w))

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(k)
        for j in range(w):
            gxp[..., j : j + seq, :] += g @ k[j].T
            win = xp[..., j : j + seq, :]
            gk[j] = win.reshape(-1, din).T @ g.reshape(-1, dout)
        return gxp[..., p : p + seq, :], gk

    return make_result(out, (x, kernel), backward, "conv1d")


def quantile(x: Tensor, q: float, counts: np.ndarray | None = None) -> Tensor:
    """Linearly interpolated quantile over axis -2 at rank ``q*(n-1)``.

    ``counts`` gives the number of valid rows per leading index when ``x`` is
    padded (``x`` of shape ``B×V×D``); padded rows are ignored.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    xd = x.data
    if counts is None:
        counts = np.full(xd.shape[:-2], xd.shape[-2], dtype=int)
    lead = xd.shape[:-2]
    flat = xd.reshape((-1,) + xd.shape[-2:])
    cnt = np.asarray(counts).reshape(-1)
    out = np.empty((flat.shape[0], flat.shape[2]), dtype=xd.dtype)
    picks = []
    cols = np.arange(flat.shape[2])
    for bi in range(flat.shape[0]):
        n = int(cnt[bi])
        if n < 1:
            raise ValueError("quantile over zero rows")
        order = np.argsort(flat[bi, :n], axis=0, kind="stable")
        rank = q * (n - 1)
        lo = int(np.floor(rank))
        hi = min(lo + 1, n - 1)
        frac = rank - lo
        ilo, ihi = order[lo], order[hi]
        out[bi] = (1 - frac) * flat[bi, ilo, cols] + frac * flat[bi, ihi, cols]
        picks.append((ilo, ihi, frac))

    def backward(g):
        gf = g.reshape(flat.shape[0], flat.shape[2])
        res = np.zeros_like(flat)
        for bi, (ilo, ihi, frac) in enumerate(picks):
            np.add.at(res[bi], (ilo, cols), (1 - frac) * gf[bi])
            np.add.at(res[bi], (ihi, cols), frac * gf[bi])
        return (res.reshape(xd.shape),)

    return make_result(out.reshape(lead + (xd.shape[-1],)), (x,), backward, "quantile")
