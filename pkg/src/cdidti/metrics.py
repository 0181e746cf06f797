"""Classification metrics for interaction scores.

AUROC uses the Mann–Whitney statistic (ties count one half) computed from
average ranks. AUPRC is average precision: precision at each distinct score
threshold weighted by the recall gained there (step integration, no
interpolation).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

THRESHOLD = 0.5


@dataclass
class EvalReport:
    accuracy: float
    f1: float
    auroc: float | None
    auprc: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    n: int
    scores: list[float]
    labels: list[int]

    @property
    def defined(self) -> bool:
        return self.auroc is not None and self.auprc is not None

    def to_dict(self, include_scores: bool = True) -> dict:
        d = asdict(self)
        if not include_scores:
            d.pop("scores")
            d.pop("labels")
        return d


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.shape[0]} vs {y.shape[0]}")
    if s.size == 0:
        raise ValueError("no samples")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def auroc(scores, labels) -> float | None:
    """Probability that a random positive outranks a random negative; None if single-class."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    # 2·rank is integral with average ranks, so the numerator is exact.
    twice_ranks = np.rint(2 * rankdata(s, method="average")).astype(np.int64)
    u2 = int(twice_ranks[y == 1].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def auprc(scores, labels) -> float | None:
    """Average precision over distinct score thresholds; None if single-class."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        return None
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], y.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(recall_gain * precision))


def compute_metrics(scores, labels, threshold: float = THRESHOLD) -> EvalReport:
    s, y = _check(scores, labels)
    pred = (s >= threshold).astype(np.int64)
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    tn = int(((pred == 0) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    denom = 2 * tp + fp + fn
    return EvalReport(
        accuracy=(tp + tn) / y.size,
        f1=(2 * tp / denom) if denom else 0.0,
        auroc=auroc(s, y),
        auprc=auprc(s, y),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        n=int(y.size),
        scores=[float(v) for v in s],
        labels=[int(v) for v in y],
    )
