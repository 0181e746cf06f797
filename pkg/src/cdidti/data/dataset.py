"""Feature store, interaction samples and the JSON manifest format.

A manifest is UTF-8 JSON::

    {"version": 1,
     "entities": [{"id", "kind", "textual_blob", "functional_blob", "graph_blob"}],
     "interactions": [{"drug", "target", "label"}]}

Blob paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import CorruptBlobError, GraphInput, ModalFeatures, encode_graph, encode_matrix, read_blob

MANIFEST_VERSION = 1


class DatasetError(ValueError):
    """Base class for dataset loading failures."""


class MissingEntityError(DatasetError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class DimMismatchError(DatasetError):
    pass


class SchemaError(DatasetError):
    pass


@dataclass(frozen=True)
class InteractionSample:
    drug_id: str
    target_id: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def key(self) -> str:
        return f"{self.drug_id}:{self.target_id}"


@dataclass
class Dataset:
    drugs: dict[str, ModalFeatures]
    targets: dict[str, ModalFeatures]
    samples: list[InteractionSample]
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.check()

    def __len__(self) -> int:
        return len(self.samples)

    def check(self) -> None:
        """Referential integrity and consistent per-kind feature shapes."""
        for s in self.samples:
            if s.drug_id not in self.drugs:
                raise MissingEntityError(f"interaction references unknown drug_id {s.drug_id!r}")
            if s.target_id not in self.targets:
                raise MissingEntityError(f"interaction references unknown target_id {s.target_id!r}")
        for kind, store in (("drug", self.drugs), ("target", self.targets)):
            ref = None
            for eid, m in store.items():
                shape = (m.textual.shape, m.functional.shape, m.structural.node_features.shape[1])
                if ref is None:
                    ref = (eid, shape)
                elif shape != ref[1]:
                    raise DimMismatchError(
                        f"{kind} {eid!r} has feature shapes {shape}, expected {ref[1]} (as {ref[0]!r})"
                    )

    def pair(self, s: InteractionSample) -> tuple[ModalFeatures, ModalFeatures]:
        return self.drugs[s.drug_id], self.targets[s.target_id]

    def pairs(self, samples=None) -> tuple[list, np.ndarray]:
        """Model inputs ``X`` (drug/target feature pairs) and labels ``y``."""
        samples = self.samples if samples is None else samples
        return [self.pair(s) for s in samples], np.array([s.label for s in samples], dtype=np.int64)

    def find(self, key: str) -> InteractionSample:
        for s in self.samples:
            if s.key == key:
                return s
        raise MissingEntityError(f"no sample with id {key!r}")


def save_dataset(ds: Dataset, directory: Path) -> Path:
    """Write blobs and ``manifest.json`` under ``directory``; returns the manifest path."""
    directory = Path(directory)
    (directory / "blobs").mkdir(parents=True, exist_ok=True)
    entities = []
    for kind, store in (("drug", ds.drugs), ("target", ds.targets)):
        for i, (eid, m) in enumerate(store.items()):
            stem = f"blobs/{kind}_{i:05d}"
            files = {
                "textual_blob": (f"{stem}_text.bin", encode_matrix(m.textual)),
                "functional_blob": (f"{stem}_func.bin", encode_matrix(m.functional)),
                "graph_blob": (f"{stem}_graph.bin", encode_graph(m.structural)),
            }
            rec = {"id": eid, "kind": kind}
            for key, (rel, raw) in files.items():
                (directory / rel).write_bytes(raw)
                rec[key] = rel
            entities.append(rec)
    manifest = {
        "version": MANIFEST_VERSION,
        "name": ds.name,
        "entities": entities,
        "interactions": [{"drug": s.drug_id, "target": s.target_id, "label": s.label} for s in ds.samples],
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return path


def load_dataset(manifest_path: Path) -> Dataset:
    """Load a manifest (or a directory holding ``manifest.json``)."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON ({exc})") from None
    for key in ("version", "entities", "interactions"):
        if key not in doc:
            raise SchemaError(f"{manifest_path}: missing field {key!r}")
    if doc["version"] != MANIFEST_VERSION:
        raise SchemaError(f"{manifest_path}: unsupported manifest version {doc['version']!r}")
    root = manifest_path.parent
    drugs: dict[str, ModalFeatures] = {}
    targets: dict[str, ModalFeatures] = {}
    for rec in doc["entities"]:
        try:
            eid, kind = rec["id"], rec["kind"]
            paths = rec["textual_blob"], rec["functional_blob"], rec["graph_blob"]
        except KeyError as exc:
            raise SchemaError(f"entity record missing field {exc}") from None
        text, func, graph = (read_blob(root / p) for p in paths)
        if not isinstance(text, np.ndarray) or not isinstance(func, np.ndarray):
            raise CorruptBlobError(f"{eid}: textual/functional blobs must be matrices")
        if not isinstance(graph, GraphInput):
            raise CorruptBlobError(f"{eid}: graph blob must hold a graph")
        store = {"drug": drugs, "target": targets}.get(kind)
        if store is None:
            raise SchemaError(f"entity {eid!r} has unknown kind {kind!r}")
        if eid in store:
            raise SchemaError(f"duplicate {kind} id {eid!r}")
        store[eid] = ModalFeatures(eid, kind, text, graph, func)
    try:
        samples = [InteractionSample(str(r["drug"]), str(r["target"]), int(r["label"])) for r in doc["interactions"]]
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad interaction record: {exc}") from None
    return Dataset(drugs, targets, samples, name=doc.get("name", manifest_path.parent.name))
