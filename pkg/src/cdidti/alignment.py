"""Gramian volume alignment of the three modality embeddings of an entity.

The three unit-normalised embeddings at each token position span a
parallelepiped whose volume is ``sqrt(det G)``, with ``G`` their 3×3 Gram
matrix. Small volume means the modalities lie close to a common subspace; the
loss is a temperature-scaled cross-entropy over in-batch volumes.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor

VOLUME_EPS = 1e-8
NEGATIVES = ("self", "cross")


def gram_matrix(xt: Tensor, xg: Tensor, xf: Tensor) -> Tensor:
    """Pairwise dot products of three same-shaped (broadcastable) row stacks, ``...×3×3``."""
    rows = (xt, xg, xf)
    dots = [ops.sum(a * b, axis=-1) for a in rows for b in rows]
    shape = np.broadcast_shapes(*(d.shape for d in dots))
    dots = [d if d.shape == shape else ops.broadcast_to(d, shape) for d in dots]
    g = ops.stack(dots, axis=-1)
    return g.reshape(g.shape[:-1] + (3, 3))


def gram_volume(xt: Tensor, xg: Tensor, xf: Tensor, eps: float = VOLUME_EPS) -> Tensor:
    """Per-position volume ``sqrt(det(G) + eps)`` of the normalised triple.

    Inputs are ``...×Seq×Dim``; the result is ``...×Seq``. Rows with zero norm
    raise ``ValueError``. Tiny negative determinants from rounding are clipped
    to zero before ``eps`` is added.
    """
    nt, ng, nf = (ops.l2_normalize(x, axis=-1) for x in (xt, xg, xf))
    det = ops.det3(gram_matrix(nt, ng, nf))
    return ops.sqrt(ops.clip_min(det, 0.0) + eps)


def gram_loss(volumes: Tensor, tau: float = 0.1) -> Tensor:
    """In-batch contrastive loss over per-sample volumes.

    ``volumes`` is ``B`` or ``B×Seq`` (positions are mean-reduced first).
    Returns ``-(1/B) Σ_i log softmax(-V/τ)_i``.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if volumes.ndim == 2:
        volumes = ops.mean(volumes, axis=-1)
    if volumes.ndim != 1 or volumes.shape[0] < 2:
        raise ValueError(f"gram_loss needs a batch of at least 2 volumes, got shape {volumes.shape}")
    logp = ops.log_softmax(volumes * (-1.0 / tau), axis=-1)
    return ops.sum(logp) * (-1.0 / volumes.shape[0])


def gram_loss_cross(volume_matrix: Tensor, tau: float = 0.1) -> Tensor:
    """Contrastive loss where row ``i`` compares sample ``i``'s own volume
    (diagonal) against volumes of its textual embedding paired with the other
    samples' structural/functional embeddings."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    b = volume_matrix.shape[0]
    if b < 2 or volume_matrix.shape != (b, b):
        raise ValueError(f"gram_loss_cross needs a B×B volume matrix with B>=2, got {volume_matrix.shape}")
    logp = ops.log_softmax(volume_matrix * (-1.0 / tau), axis=-1)
    return ops.sum(logp * np.eye(b, dtype=logp.dtype)) * (-1.0 / b)


def modality_gram_loss(xt: Tensor, xg: Tensor, xf: Tensor, tau: float = 0.1, negatives: str = "self"):
    """Gram loss for one entity kind from ``B×Seq×Dim`` embeddings.

    Returns ``(loss, per-sample volumes)``.
    """
    own = ops.mean(gram_volume(xt, xg, xf), axis=-1)
    if negatives == "self":
        return gram_loss(own, tau), own
    if negatives == "cross":
        b = xt.shape[0]
        lead = (b, 1) + xt.shape[1:]
        other = (1, b) + xt.shape[1:]
        vm = ops.mean(gram_volume(xt.reshape(lead), xg.reshape(other), xf.reshape(other)), axis=-1)
        return gram_loss_cross(vm, tau), own
    raise ValueError(f"negatives must be one of {NEGATIVES}, got {negatives!r}")


def entity_alignment_loss(drug_triple, target_triple, tau: float = 0.1, negatives: str = "self") -> Tensor:
    """Average of the drug-side and target-side Gram losses."""
    ld, _ = modality_gram_loss(*drug_triple, tau=tau, negatives=negatives)
    lt, _ = modality_gram_loss(*target_triple, tau=tau, negatives=negatives)
    return (ld + lt) * 0.5
