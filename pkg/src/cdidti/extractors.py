"""Per-entity modality refiners.

Textual and functional sequences go through a multi-head self-attention block
(attention, LayerNorm, feed-forward, LayerNorm). Structural graphs go through
stacked graph-attention layers with residuals followed by six pooling
statistics. Every branch ends in the same ``N_POOL × Dim`` token layout so the
three modalities line up position by position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .data.features import EntityBatch
from .params import Linear, glorot, ones, zeros
from .tensor import Tensor, as_tensor, scope

N_POOL = 6
LEAKY_SLOPE = 0.2
_MASKED_LOGIT = -1e9
_MASKED_MAX = -1e30


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, s, d = x.shape
    return ops.transpose(x.reshape(tuple(lead) + (s, heads, d // heads)), -3, -2)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, s, dk = x.shape
    return ops.transpose(x, -3, -2).reshape(tuple(lead) + (s, h * dk))


def multi_head_attention(query: Tensor, context: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int):
    """Scaled dot-product attention of ``query`` rows over ``context`` rows.

    The projection matrices hold the per-head blocks side by side
    (``Dim × H·d_k``). Returns the concatenated head outputs and the attention
    weights (``...×H×Sq×Sk``).
    """
    d = wq.shape[1]
    if d % heads:
        raise ValueError(f"Dim={d} is not divisible by H={heads}")
    dk = d // heads
    q = split_heads(query @ wq, heads)
    k = split_heads(context @ wk, heads)
    v = split_heads(context @ wv, heads)
    scores = (q @ ops.transpose(k)) * (1.0 / np.sqrt(dk))
    attn = ops.softmax(scores, axis=-1)
    return merge_heads(attn @ v), attn


@dataclass
class MhsaBlockParams:
    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    out: Linear
    ln1_gain: Tensor
    ln1_bias: Tensor
    ffn_in: Linear
    ffn_out: Linear
    ln2_gain: Tensor
    ln2_bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, heads: int) -> "MhsaBlockParams":
        if dim % heads:
            raise ValueError(f"Dim={dim} is not divisible by H={heads}")
        return cls(
            heads=heads,
            wq=glorot(rng, dim, dim),
            wk=glorot(rng, dim, dim),
            wv=glorot(rng, dim, dim),
            out=Linear.init(rng, dim, dim),
            ln1_gain=ones(dim),
            ln1_bias=zeros(dim),
            ffn_in=Linear.init(rng, dim, 4 * dim),
            ffn_out=Linear.init(rng, 4 * dim, dim),
            ln2_gain=ones(dim),
            ln2_bias=zeros(dim),
        )


def mhsa_block(x: Tensor, p: MhsaBlockParams, trace: dict | None = None) -> Tensor:
    """One self-attention block; output has the shape of ``x`` (``...×Seq×Dim``)."""
    heads_out, attn = multi_head_attention(x, x, p.wq, p.wk, p.wv, p.heads)
    if trace is not None:
        trace["attention"] = attn.data
    h = ops.layer_norm(p.out(heads_out), p.ln1_gain, p.ln1_bias)
    h = p.ffn_out(ops.relu(p.ffn_in(h)))
    return ops.layer_norm(h, p.ln2_gain, p.ln2_bias)


@dataclass
class GatLayerParams:
    weight: Tensor
    att_src: Tensor
    att_dst: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int) -> "GatLayerParams":
        return cls(glorot(rng, dim, dim), glorot(rng, dim, 1), glorot(rng, dim, 1))


def gat_layer(x: Tensor, adjacency: np.ndarray, p: GatLayerParams, trace: dict | None = None) -> Tensor:
    """Graph attention over neighbourhoods plus a residual connection.

    ``adjacency`` is boolean (``...×V×V``) and must include self-loops, so
    every softmax row has at least one live entry.
    """
    if x.shape[-2] == 0:
        raise ValueError("gat_layer on an empty graph")
    adjacency = np.asarray(adjacency, dtype=bool)
    if not np.all(np.diagonal(adjacency, axis1=-2, axis2=-1)):
        raise ValueError("gat_layer needs self-loops on every node")
    h = x @ p.weight
    logits = ops.leaky_relu((h @ p.att_src) + ops.transpose(h @ p.att_dst), LEAKY_SLOPE)
    alpha = ops.softmax(ops.masked_fill(logits, ~adjacency, _MASKED_LOGIT), axis=-1)
    if trace is not None:
        trace["attention"] = alpha.data
    return alpha @ h + x


def hybrid_pool(x: Tensor, counts: np.ndarray | None = None) -> Tensor:
    """Max, mean, sum, variance, upper and lower quartile over nodes (axis -2).

    Result rows are in that order (``...×6×Dim``). With ``counts``, only the
    first ``counts[i]`` nodes of each padded graph take part.
    """
    v = x.shape[-2]
    if counts is None:
        counts = np.full(x.shape[:-2], v, dtype=np.int64)
    counts = np.asarray(counts)
    valid = (np.arange(v) < counts[..., None])[..., None]
    n = as_tensor(counts[..., None].astype(x.dtype), x)
    xm = x * as_tensor(valid.astype(x.dtype), x)
    total = ops.sum(xm, axis=-2)
    mean = total / n
    centered = (x - ops.reshape(mean, mean.shape[:-1] + (1, mean.shape[-1]))) * as_tensor(valid.astype(x.dtype), x)
    variance = ops.sum(centered * centered, axis=-2) / n
    peak = ops.max(ops.masked_fill(x, ~valid, _MASKED_MAX), axis=-2)
    upper = ops.quantile(x, 0.75, counts)
    lower = ops.quantile(x, 0.25, counts)
    return ops.stack([peak, mean, total, variance, upper, lower], axis=-2)


@dataclass
class SequenceBranchParams:
    in_proj: Linear
    blocks: list[MhsaBlockParams]
    pool: Tensor

    @classmethod
    def init(cls, rng, d_in: int, seq_len: int, dim: int, heads: int, layers: int) -> "SequenceBranchParams":
        return cls(
            Linear.init(rng, d_in, dim),
            [MhsaBlockParams.init(rng, dim, heads) for _ in range(layers)],
            glorot(rng, seq_len, N_POOL, shape=(N_POOL, seq_len)),
        )


@dataclass
class GraphBranchParams:
    in_proj: Linear
    layers: list[GatLayerParams]

    @classmethod
    def init(cls, rng, d_in: int, dim: int, layers: int) -> "GraphBranchParams":
        if layers < 1:
            raise ValueError("need at least one GAT layer")
        return cls(Linear.init(rng, d_in, dim), [GatLayerParams.init(rng, dim) for _ in range(layers)])


@dataclass
class ExtractorParams:
    textual: SequenceBranchParams
    structural: GraphBranchParams
    functional: SequenceBranchParams


def sequence_branch(x: Tensor, p: SequenceBranchParams, trace: dict | None = None) -> Tensor:
    h = p.in_proj(x)
    for blk in p.blocks:
        h = mhsa_block(h, blk, trace)
    return p.pool @ h


def graph_branch(nodes: Tensor, adjacency, counts, p: GraphBranchParams, trace: dict | None = None) -> Tensor:
    h = p.in_proj(nodes)
    for layer in p.layers:
        h = gat_layer(h, adjacency, layer, trace)
    return hybrid_pool(h, counts)


def extract_modalities(batch: EntityBatch, p: ExtractorParams, trace: dict | None = None):
    """Refine one entity kind's three modalities into ``B×6×Dim`` tensors each."""
    for name in ("textual", "functional", "nodes"):
        if getattr(batch, name) is None:
            raise ValueError(f"missing modality: {name}")
    sub = {} if trace is not None else None
    with scope("textual"):
        xt = sequence_branch(as_tensor(batch.textual), p.textual, sub.setdefault("textual", {}) if sub is not None else None)
    with scope("structural"):
        xg = graph_branch(
            as_tensor(batch.nodes), batch.adjacency, batch.counts, p.structural,
            sub.setdefault("structural", {}) if sub is not None else None,
        )
    with scope("functional"):
        xf = sequence_branch(as_tensor(batch.functional), p.functional, sub.setdefault("functional", {}) if sub is not None else None)
    if trace is not None:
        trace.update(sub)
    return xt, xg, xf
