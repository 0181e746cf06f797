"""CSV exports of stage embeddings and attention-derived importances.

Floats are written with 9 significant digits.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, forward, make_batch
from .tensor import no_grad

STAGES = ("t", "g", "f", "early", "later", "output")
MODALITIES = ("textual", "structural", "functional")


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


def stage_embeddings(pairs, params: ModelParams, cfg: ModelConfig, batch_size: int = 64) -> dict[str, np.ndarray]:
    """Mean-pooled ``N×Dim`` representation of every sample at every stage."""
    pairs = list(pairs)
    chunks: dict[str, list] = {}
    with no_grad():
        for i in range(0, len(pairs), batch_size):
            out = forward(make_batch(pairs[i : i + batch_size]), params, cfg)
            for k, v in out.features.items():
                chunks.setdefault(k, []).append(v.data)
    return {k: np.concatenate(v) for k, v in chunks.items() if k in STAGES}


def export_embeddings(samples, pairs, params: ModelParams, cfg: ModelConfig, out_dir: Path) -> list[Path]:
    """Write ``embeddings_<stage>.csv`` (one row per sample) for every stage the model has."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emb = stage_embeddings(pairs, params, cfg)
    written = []
    for stage in STAGES:
        if stage not in emb:
            continue
        mat = emb[stage]
        path = out_dir / f"embeddings_{stage}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["drug_id", "target_id", "label"] + [f"e{j}" for j in range(mat.shape[1])])
            for s, row in zip(samples, mat):
                w.writerow([s.drug_id, s.target_id, s.label] + [_fmt(v) for v in row])
        written.append(path)
    return written


def importances(attention: np.ndarray, count: int | None = None) -> np.ndarray:
    """Attention mass received by each key position, scaled so the maximum is 1.

    ``attention`` is ``H×Sq×Sk`` (or ``Sq×Sk``); rows are queries.
    """
    a = np.asarray(attention, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if count is not None:
        a = a[:, :count, :count]
    mass = a.sum(axis=(0, 1))
    top = mass.max()
    return mass / top if top > 0 else np.zeros_like(mass)


def attention_maps(pair, params: ModelParams, cfg: ModelConfig) -> dict[str, dict[str, np.ndarray]]:
    """Per-modality, per-entity-kind importances for one drug–target pair."""
    trace: dict = {}
    with no_grad():
        forward(make_batch([pair]), params, cfg, trace=trace)
    out: dict[str, dict[str, np.ndarray]] = {}
    for kind, m in zip(("drug", "target"), pair):
        for modality in MODALITIES:
            rec = trace.get(kind, {}).get(modality)
            if not rec or "attention" not in rec:
                continue
            att = rec["attention"][0]
            count = m.structural.node_count if modality == "structural" else None
            out.setdefault(modality, {})[kind] = importances(att, count)
    return out


def export_attention(sample, pair, params: ModelParams, cfg: ModelConfig, out_dir: Path) -> list[Path]:
    """Write ``attention_<modality>.csv`` with an importance per token or node."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = attention_maps(pair, params, cfg)
    ids = {"drug": sample.drug_id, "target": sample.target_id}
    written = []
    for modality, per_kind in maps.items():
        path = out_dir / f"attention_{modality}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["entity_kind", "entity_id", "position", "importance"])
            for kind, imp in per_kind.items():
                for j, v in enumerate(imp):
                    w.writerow([kind, ids[kind], j, _fmt(v)])
        written.append(path)
    return written
