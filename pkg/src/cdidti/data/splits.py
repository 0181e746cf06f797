"""Train/validation/test split protocols.

``random`` partitions samples. ``cold_drug`` and ``cold_target`` partition
the entity ids of one kind, so no test drug (or target) is seen in training.
``cold_pair`` partitions both kinds and keeps only samples whose drug and
target fall in the same fold. ``cross_domain`` trains on one dataset and tests
on another.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, InteractionSample

MODES = ("random", "cold_drug", "cold_target", "cold_pair", "cross_domain")
# BindingDB train/val/test sizes: 12,668 / 6,644 / 13,289.
BINDINGDB_FRACTIONS = (12668 / 32601, 6644 / 32601, 13289 / 32601)


class InfeasibleSplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "random"
    fractions: tuple[float, float, float] = BINDINGDB_FRACTIONS
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"split mode must be one of {MODES}, got {self.mode!r}")
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {self.fractions}")
        object.__setattr__(self, "fractions", fr)


def _sizes(n: int, fractions) -> tuple[int, int, int]:
    """Split ``n`` items into three counts, largest remainder rounding."""
    raw = np.asarray(fractions) * n
    base = np.floor(raw).astype(int)
    rem = n - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return int(base[0]), int(base[1]), int(base[2])


def _partition(items: list, fractions, rng) -> list[list]:
    perm = [items[i] for i in rng.permutation(len(items))]
    a, b, _ = _sizes(len(items), fractions)
    return [perm[:a], perm[a : a + b], perm[a + b :]]


def make_split(samples: list[InteractionSample], spec: SplitSpec, other: list[InteractionSample] | None = None):
    """Return ``(train, val, test)`` sample lists.

    For ``cross_domain``, ``samples`` is domain A (split into train/val by the
    ratio of the first two fractions) and ``other`` is domain B, used whole
    as the test set.
    """
    rng = np.random.default_rng(spec.seed)
    samples = list(samples)
    if spec.mode == "random":
        if len(samples) < 3:
            raise InfeasibleSplitError("random split needs at least 3 samples")
        return tuple(_partition(samples, spec.fractions, rng))
    if spec.mode == "cross_domain":
        if other is None:
            raise InfeasibleSplitError("cross_domain split needs a second dataset")
        tv = spec.fractions[0] + spec.fractions[1]
        if tv <= 0:
            raise InfeasibleSplitError("cross_domain needs non-zero train/val fractions")
        train, val, _ = _partition(samples, (spec.fractions[0] / tv, spec.fractions[1] / tv, 0.0), rng)
        return train, val, list(other)
    if spec.mode in ("cold_drug", "cold_target"):
        attr = "drug_id" if spec.mode == "cold_drug" else "target_id"
        ids = sorted({getattr(s, attr) for s in samples})
        need = sum(1 for f in spec.fractions if f > 0)
        if len(ids) < max(need, 2):
            raise InfeasibleSplitError(f"{spec.mode} needs at least {max(need, 2)} distinct ids, found {len(ids)}")
        folds = _partition(ids, spec.fractions, rng)
        where = {eid: k for k, fold in enumerate(folds) for eid in fold}
        out = ([], [], [])
        for s in samples:
            out[where[getattr(s, attr)]].append(s)
        return out
    # cold_pair
    drugs = sorted({s.drug_id for s in samples})
    targets = sorted({s.target_id for s in samples})
    if len(drugs) < 2 or len(targets) < 2:
        raise InfeasibleSplitError("cold_pair needs at least 2 distinct drugs and 2 distinct targets")
    dfold = {e: k for k, fold in enumerate(_partition(drugs, spec.fractions, rng)) for e in fold}
    tfold = {e: k for k, fold in enumerate(_partition(targets, spec.fractions, rng)) for e in fold}
    out = ([], [], [])
    for s in samples:
        k = dfold[s.drug_id]
        if tfold[s.target_id] == k:
            out[k].append(s)
    if not out[0] or not out[2] and spec.fractions[2] > 0:
        raise InfeasibleSplitError("cold_pair produced an empty train or test set")
    return out


def split_dataset(ds: Dataset, spec: SplitSpec, other: Dataset | None = None):
    return make_split(ds.samples, spec, None if other is None else other.samples)
