"""Late fusion: per-modality drug–target interaction features and their
orthogonal, similarity-masked fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .fusion_early import BcaParams, bca
from .params import Linear, glorot
from .tensor import Tensor, as_tensor, scope

RESIDUAL_MODES = ("gram_schmidt", "literal")


@dataclass
class HgcnfParams:
    lin_d: Linear
    lin_t: Linear
    conv_d: Tensor
    conv_t: Tensor
    out: Linear

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, window: int = 3) -> "HgcnfParams":
        if window % 2 == 0:
            raise ValueError("conv window must be odd")
        fan = window * dim
        return cls(
            Linear.init(rng, dim, dim),
            Linear.init(rng, dim, dim),
            glorot(rng, fan, dim, shape=(window, dim, dim)),
            glorot(rng, fan, dim, shape=(window, dim, dim)),
            Linear.init(rng, 2 * dim, dim),
        )


def hgcnf(dg: Tensor, tg: Tensor, p: HgcnfParams, trace: dict | None = None) -> Tensor:
    """Convolution plus interaction-matrix attention between structural streams.

    ``C = d·tᵀ``; each side gets ``conv(f) + softmax_rows(C)·f_other + f``
    and the two sides are joined by a linear map.
    """
    if dg.shape != tg.shape:
        raise ValueError(f"hgcnf inputs must share a shape, got {dg.shape} and {tg.shape}")
    c = dg @ ops.transpose(tg)
    attn_d = ops.softmax(c, axis=-1)
    attn_t = ops.softmax(ops.transpose(c), axis=-1)
    if trace is not None:
        trace["drug"] = attn_d.data
        trace["target"] = attn_t.data
    fd = p.lin_d(dg)
    ft = p.lin_t(tg)
    fd2 = ops.conv1d(fd, p.conv_d) + attn_d @ ft + fd
    ft2 = ops.conv1d(ft, p.conv_t) + attn_t @ fd + ft
    return p.out(ops.concat([fd2, ft2], axis=-1))


def orthogonal_residual(a: Tensor, b: Tensor, mode: str = "gram_schmidt") -> Tensor:
    """Row-wise ``b - (<a,b>/|a|²)·a``; rows where ``a`` is zero keep ``b``.

    ``literal`` mode rescales ``a`` instead: ``a - (<a,b>/|a|²)·a``.
    """
    dot = ops.sum(a * b, axis=-1, keepdims=True)
    sq = ops.sum(a * a, axis=-1, keepdims=True)
    coef = dot / ops.masked_fill(sq, sq.data == 0, 1.0)
    if mode == "gram_schmidt":
        return b - coef * a
    if mode == "literal":
        return a - coef * a
    raise ValueError(f"residual mode must be one of {RESIDUAL_MODES}, got {mode!r}")


@dataclass
class DofParams:
    red: Linear
    tq: Linear
    tk: Linear
    tv: Linear
    out: Linear

    @classmethod
    def init(cls, rng, dim: int) -> "DofParams":
        return cls(
            Linear.init(rng, 12 * dim, dim),
            Linear.init(rng, dim, dim),
            Linear.init(rng, dim, dim),
            Linear.init(rng, dim, dim),
            Linear.init(rng, 4 * dim, dim),
        )


def dof(
    ft: Tensor,
    fg: Tensor,
    ff: Tensor,
    p: DofParams,
    threshold: float = 0.5,
    residual: str = "gram_schmidt",
    mask_override: float | None = None,
    trace: dict | None = None,
) -> Tensor:
    """Deep orthogonal fusion of the three per-modality DTI features.

    A modality's features at a position survive (mask 1) only when their
    cosine similarity to the redundancy representation is at most
    ``threshold``. Masks are constants in the backward pass;
    ``mask_override`` forces every mask to the given value.
    """
    if not -1.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [-1, 1]")
    f_tg = ops.concat([ft, fg], axis=-1)
    f_tf = ops.concat([ft, ff], axis=-1)
    f_gf = ops.concat([fg, ff], axis=-1)
    x12 = ops.concat([f_tg, orthogonal_residual(f_tg, f_tf, residual)], axis=-1)
    x13 = ops.concat([f_tg, orthogonal_residual(f_tg, f_gf, residual)], axis=-1)
    x23 = ops.concat([f_tf, orthogonal_residual(f_tf, f_gf, residual)], axis=-1)
    x_red = p.red(ops.concat([x12, x13, x23], axis=-1))
    key = p.tk(x_red)
    zs = []
    for name, fm in (("t", ft), ("g", fg), ("f", ff)):
        sim = ops.cosine_similarity(key, p.tq(fm), axis=-1)
        if mask_override is None:
            mask = (sim.data <= threshold).astype(fm.dtype)
        else:
            mask = np.full(sim.shape, mask_override, dtype=fm.dtype)
        if trace is not None:
            trace[f"sim_{name}"] = sim.data
            trace[f"mask_{name}"] = mask
        zs.append(p.tv(fm) * as_tensor(mask[..., None], fm))
    return p.out(ops.concat(zs + [x_red], axis=-1))


@dataclass
class LateParams:
    textual: BcaParams
    structural: HgcnfParams
    functional: BcaParams


def per_modality_interactions(drug_triple, target_triple, p: LateParams, bca_mode: str = "cross", trace: dict | None = None):
    """DTI features per modality: BCA for textual/functional, HGCNF for structural."""
    (dt, dg, df), (tt, tg, tf) = drug_triple, target_triple
    sub = (lambda k: trace.setdefault(k, {})) if trace is not None else (lambda k: None)
    with scope("late.textual"):
        ft = bca(dt, tt, p.textual, bca_mode, sub("textual"))
    with scope("late.structural"):
        fg = hgcnf(dg, tg, p.structural, sub("structural"))
    with scope("late.functional"):
        ff = bca(df, tf, p.functional, bca_mode, sub("functional"))
    return ft, fg, ff
