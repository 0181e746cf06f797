"""Early fusion: multi-source cross-attention within an entity, then
bidirectional cross-attention between the drug and target streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .extractors import multi_head_attention
from .params import Linear, glorot
from .tensor import Tensor

BCA_MODES = ("cross", "self")


@dataclass
class AttentionHeads:
    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, heads: int) -> "AttentionHeads":
        if dim % heads:
            raise ValueError(f"Dim={dim} is not divisible by H={heads}")
        return cls(heads, glorot(rng, dim, dim), glorot(rng, dim, dim), glorot(rng, dim, dim))

    def __call__(self, query: Tensor, context: Tensor):
        return multi_head_attention(query, context, self.wq, self.wk, self.wv, self.heads)


@dataclass
class McaParams:
    attn: AttentionHeads
    out: Linear

    @classmethod
    def init(cls, rng, dim: int, heads: int) -> "McaParams":
        return cls(AttentionHeads.init(rng, dim, heads), Linear.init(rng, 3 * dim, dim))


def mca(xt: Tensor, xg: Tensor, xf: Tensor, p: McaParams, trace: dict | None = None) -> Tensor:
    """Each modality attends over the token concatenation of the other two.

    t queries g‖f, g queries f‖t, f queries t‖g; the three attended streams
    are joined feature-wise and mapped back to ``Seq×Dim``.
    """
    if not (xt.shape == xg.shape == xf.shape):
        raise ValueError(f"mca inputs must share a shape, got {xt.shape}, {xg.shape}, {xf.shape}")
    streams = []
    for name, q, pair in (("t", xt, (xg, xf)), ("g", xg, (xf, xt)), ("f", xf, (xt, xg))):
        out, attn = p.attn(q, ops.concat(pair, axis=-2))
        if trace is not None:
            trace[name] = attn.data
        streams.append(out)
    return p.out(ops.concat(streams, axis=-1))


@dataclass
class BcaParams:
    drug: AttentionHeads
    target: AttentionHeads
    out: Linear

    @classmethod
    def init(cls, rng, dim: int, heads: int) -> "BcaParams":
        return cls(AttentionHeads.init(rng, dim, heads), AttentionHeads.init(rng, dim, heads), Linear.init(rng, 2 * dim, dim))


def bca_streams(d: Tensor, t: Tensor, p: BcaParams, mode: str = "cross", trace: dict | None = None):
    """The two attended streams before the final linear map.

    In ``cross`` mode the drug stream queries target keys/values and vice versa;
    ``self`` mode attends each stream to itself.
    """
    if d.shape != t.shape:
        raise ValueError(f"bca streams must share a shape, got {d.shape} and {t.shape}")
    if mode == "cross":
        d_out, d_attn = p.drug(d, t)
        t_out, t_attn = p.target(t, d)
    elif mode == "self":
        d_out, d_attn = p.drug(d, d)
        t_out, t_attn = p.target(t, t)
    else:
        raise ValueError(f"bca mode must be one of {BCA_MODES}, got {mode!r}")
    if trace is not None:
        trace["drug"] = d_attn.data
        trace["target"] = t_attn.data
    return d_out, t_out


def bca(d: Tensor, t: Tensor, p: BcaParams, mode: str = "cross", trace: dict | None = None) -> Tensor:
    d_out, t_out = bca_streams(d, t, p, mode, trace)
    return p.out(ops.concat([d_out, t_out], axis=-1))
