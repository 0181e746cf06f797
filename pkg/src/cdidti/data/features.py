"""Per-entity modality features and their binary blob encoding."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CDI1"
KIND_MATRIX = 0
KIND_GRAPH = 1


class CorruptBlobError(ValueError):
    """A feature blob could not be decoded."""


@dataclass
class GraphInput:
    """Node features plus an undirected edge list (pairs of node indices)."""

    node_features: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float32)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.node_features.ndim != 2 or self.node_features.shape[0] == 0:
            raise ValueError("graph needs at least one node (node_features must be V×Dim)")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.node_count):
            raise ValueError(f"edge endpoint out of range for a graph with {self.node_count} nodes")

    @property
    def node_count(self) -> int:
        return self.node_features.shape[0]

    def adjacency(self) -> np.ndarray:
        """Boolean V×V adjacency, symmetric, with self-loops on every node."""
        n = self.node_count
        adj = np.eye(n, dtype=bool)
        if self.edges.size:
            adj[self.edges[:, 0], self.edges[:, 1]] = True
            adj[self.edges[:, 1], self.edges[:, 0]] = True
        return adj


@dataclass
class ModalFeatures:
    """Textual, structural and functional features of one drug or target."""

    entity_id: str
    entity_kind: str
    textual: np.ndarray
    structural: GraphInput
    functional: np.ndarray

    def __post_init__(self):
        if self.entity_kind not in ("drug", "target"):
            raise ValueError(f"entity_kind must be 'drug' or 'target', got {self.entity_kind!r}")
        for name in ("textual", "functional"):
            arr = getattr(self, name)
            if arr is None:
                raise ValueError(f"{self.entity_id}: missing {name} modality")
            arr = np.asarray(arr, dtype=np.float32)
            if arr.ndim != 2 or 0 in arr.shape:
                raise ValueError(f"{self.entity_id}: {name} features must be a non-empty Seq×Dim matrix")
            setattr(self, name, arr)
        if self.structural is None:
            raise ValueError(f"{self.entity_id}: missing structural modality")


@dataclass
class EntityBatch:
    """Stacked modality arrays for a batch of entities of one kind.

    Graphs are zero-padded to the largest node count; padded nodes only see
    themselves in ``adjacency`` and are excluded from pooling via ``counts``.
    """

    ids: list[str]
    textual: np.ndarray
    functional: np.ndarray
    nodes: np.ndarray
    adjacency: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def collate(entities: list[ModalFeatures]) -> EntityBatch:
    if not entities:
        raise ValueError("cannot collate an empty batch")
    for name in ("textual", "functional"):
        shapes = {getattr(e, name).shape for e in entities}
        if len(shapes) > 1:
            raise ValueError(f"inconsistent {name} shapes in batch: {sorted(shapes)}")
    dims = {e.structural.node_features.shape[1] for e in entities}
    if len(dims) > 1:
        raise ValueError(f"inconsistent graph feature widths in batch: {sorted(dims)}")
    vmax = max(e.structural.node_count for e in entities)
    b = len(entities)
    nodes = np.zeros((b, vmax, dims.pop()), dtype=np.float32)
    adj = np.broadcast_to(np.eye(vmax, dtype=bool), (b, vmax, vmax)).copy()
    counts = np.empty(b, dtype=np.int64)
    for i, e in enumerate(entities):
        g = e.structural
        n = g.node_count
        nodes[i, :n] = g.node_features
        adj[i, :n, :n] = g.adjacency()
        counts[i] = n
    return EntityBatch(
        ids=[e.entity_id for e in entities],
        textual=np.stack([e.textual for e in entities]),
        functional=np.stack([e.functional for e in entities]),
        nodes=nodes,
        adjacency=adj,
        counts=counts,
    )


# Blob encoding: little-endian, magic "CDI1", kind byte, then payload.

def encode_matrix(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("matrix blob needs a 2-D array")
    return MAGIC + struct.pack("<BII", KIND_MATRIX, *arr.shape) + arr.tobytes()


def encode_graph(g: GraphInput) -> bytes:
    x = np.asarray(g.node_features, dtype="<f4")
    e = np.asarray(g.edges, dtype="<u4").reshape(-1, 2)
    return (
        MAGIC
        + struct.pack("<BII", KIND_GRAPH, *x.shape)
        + x.tobytes()
        + struct.pack("<I", e.shape[0])
        + e.tobytes()
    )


def _read(buf: io.BytesIO, n: int, what: str) -> bytes:
    chunk = buf.read(n)
    if len(chunk) != n:
        raise CorruptBlobError(f"truncated blob while reading {what}")
    return chunk


def decode_blob(raw: bytes, source: str = "<bytes>") -> np.ndarray | GraphInput:
    buf = io.BytesIO(raw)
    try:
        if _read(buf, 4, "magic") != MAGIC:
            raise CorruptBlobError("bad magic")
        (kind,) = struct.unpack("<B", _read(buf, 1, "kind"))
        rows, cols = struct.unpack("<II", _read(buf, 8, "shape"))
        data = np.frombuffer(_read(buf, 4 * rows * cols, "data"), dtype="<f4").reshape(rows, cols)
        if kind == KIND_MATRIX:
            out = data.astype(np.float32)
        elif kind == KIND_GRAPH:
            (n_edges,) = struct.unpack("<I", _read(buf, 4, "edge count"))
            edges = np.frombuffer(_read(buf, 8 * n_edges, "edges"), dtype="<u4").reshape(n_edges, 2)
            out = GraphInput(data.astype(np.float32), edges.astype(np.int64))
        else:
            raise CorruptBlobError(f"unknown kind byte {kind}")
        if buf.read(1):
            raise CorruptBlobError("trailing bytes after payload")
    except CorruptBlobError as exc:
        raise CorruptBlobError(f"corrupt blob {source}: {exc}") from None
    except ValueError as exc:
        raise CorruptBlobError(f"corrupt blob {source}: {exc}") from None
    return out


def read_blob(path: Path) -> np.ndarray | GraphInput:
    return decode_blob(Path(path).read_bytes(), str(path))
