"""Full network assembly, the six-branch objective and prediction."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .alignment import NEGATIVES, modality_gram_loss
from .data.features import EntityBatch, ModalFeatures, collate
from .extractors import ExtractorParams, GraphBranchParams, SequenceBranchParams, extract_modalities
from .fusion_early import BCA_MODES, BcaParams, McaParams, bca, mca
from .fusion_late import RESIDUAL_MODES, DofParams, HgcnfParams, LateParams, dof, per_modality_interactions
from .params import Linear, count_parameters, named_tensors
from .tensor import Tensor, no_grad, scope

BRANCHES = ("t", "g", "f", "early", "later", "output")
MODALITIES = ("t", "g", "f")
VARIANTS = ("full", "only_t", "only_g", "only_f", "only_early", "only_later")


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    heads: int = 4
    gat_layers: int = 3
    mhsa_layers: int = 1
    temperature: float = 0.1
    loss_weight: float = 1.0
    threshold: float = 0.5
    bca_mode: str = "cross"
    residual: str = "gram_schmidt"
    gram_negatives: str = "cross"
    variant: str = "full"
    pos_weight: float | None = None

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.heads <= 0 or self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim={self.hidden_dim} must be a positive multiple of heads={self.heads}")
        if self.hidden_dim % 2:
            raise ValueError("hidden_dim must be even (classifier heads use hidden_dim/2)")
        if self.gat_layers < 1 or self.mhsa_layers < 1:
            raise ValueError("gat_layers and mhsa_layers must be >= 1")
        if self.temperature <= 0 or self.loss_weight < 0:
            raise ValueError("temperature must be > 0 and loss_weight >= 0")
        for name, allowed in (
            ("bca_mode", BCA_MODES),
            ("residual", RESIDUAL_MODES),
            ("gram_negatives", NEGATIVES),
            ("variant", VARIANTS),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def modalities(self) -> tuple[str, ...]:
        return (self.variant[5:],) if self.variant in ("only_t", "only_g", "only_f") else MODALITIES

    @property
    def branches(self) -> tuple[str, ...]:
        v = self.variant
        if v == "full":
            return BRANCHES
        if v == "only_early":
            return ("early", "output")
        if v == "only_later":
            return ("t", "g", "f", "later", "output")
        return (v[5:], "early", "output")


@dataclass(frozen=True)
class EntityDims:
    text_len: int
    text_dim: int
    func_len: int
    func_dim: int
    node_dim: int

    @classmethod
    def of(cls, m: ModalFeatures) -> "EntityDims":
        return cls(*m.textual.shape, *m.functional.shape, m.structural.node_features.shape[1])


@dataclass(frozen=True)
class InputDims:
    drug: EntityDims
    target: EntityDims


@dataclass
class Head:
    hidden: Linear
    out: Linear

    @classmethod
    def init(cls, rng, dim: int) -> "Head":
        return cls(Linear.init(rng, dim, dim // 2), Linear.init(rng, dim // 2, 2))

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(ops.relu(self.hidden(x)))


@dataclass
class ModelParams:
    drug: ExtractorParams
    target: ExtractorParams
    mca_drug: McaParams | None
    mca_target: McaParams | None
    bca_early: BcaParams | None
    late: LateParams
    dof: DofParams | None
    output: Linear
    heads: dict[str, Head] = field(default_factory=dict)

    def named_tensors(self):
        return list(named_tensors(self))

    def num_parameters(self) -> int:
        return count_parameters(self)


def _extractor(rng, dims: EntityDims, cfg: ModelConfig) -> ExtractorParams:
    mods = cfg.modalities
    d, h = cfg.hidden_dim, cfg.heads
    return ExtractorParams(
        textual=SequenceBranchParams.init(rng, dims.text_dim, dims.text_len, d, h, cfg.mhsa_layers) if "t" in mods else None,
        structural=GraphBranchParams.init(rng, dims.node_dim, d, cfg.gat_layers) if "g" in mods else None,
        functional=SequenceBranchParams.init(rng, dims.func_dim, dims.func_len, d, h, cfg.mhsa_layers) if "f" in mods else None,
    )


def init_params(cfg: ModelConfig, dims: InputDims, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    d, h = cfg.hidden_dim, cfg.heads
    mods = cfg.modalities
    full = len(mods) == 3
    early = cfg.variant != "only_later"
    later = cfg.variant != "only_early"
    drug = _extractor(rng, dims.drug, cfg)
    target = _extractor(rng, dims.target, cfg)
    mca_d = McaParams.init(rng, d, h) if full and early else None
    mca_t = McaParams.init(rng, d, h) if full and early else None
    bca_early = BcaParams.init(rng, d, h) if early else None
    late = LateParams(
        textual=BcaParams.init(rng, d, h) if later and "t" in mods else None,
        structural=HgcnfParams.init(rng, d) if later and "g" in mods else None,
        functional=BcaParams.init(rng, d, h) if later and "f" in mods else None,
    )
    dof_p = DofParams.init(rng, d) if full and later else None
    n_in = 2 if early and later else 1
    output = Linear.init(rng, n_in * d, d)
    heads = {name: Head.init(rng, d) for name in cfg.branches}
    return ModelParams(drug, target, mca_d, mca_t, bca_early, late, dof_p, output, heads)


@dataclass
class PairBatch:
    drugs: EntityBatch
    targets: EntityBatch
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.drugs)


def make_batch(pairs, labels=None) -> PairBatch:
    """Collate ``(drug ModalFeatures, target ModalFeatures)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("batch must be nonempty")
    lab = None if labels is None else np.asarray(labels, dtype=np.int64)
    return PairBatch(collate([p[0] for p in pairs]), collate([p[1] for p in pairs]), lab)


@dataclass
class ForwardOutputs:
    logits: dict[str, Tensor]
    features: dict[str, Tensor]
    align_loss: Tensor | None
    volumes: dict[str, np.ndarray]
    trace: dict | None = None

    def probabilities(self, branch: str = "output") -> np.ndarray:
        z = self.logits[branch].data.astype(np.float64)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


def _select(triple, mods):
    return {m: x for m, x in zip(MODALITIES, triple) if x is not None and m in mods}


def forward(
    batch: PairBatch,
    params: ModelParams,
    cfg: ModelConfig,
    *,
    mask_override: float | None = None,
    trace: dict | None = None,
) -> ForwardOutputs:
    sub = (lambda k: trace.setdefault(k, {})) if trace is not None else (lambda k: None)
    mods = cfg.modalities
    with scope("drug.extract"):
        d = extract_modalities(batch.drugs, params.drug, sub("drug")) if len(mods) == 3 else _extract_one(batch.drugs, params.drug, sub("drug"))
    with scope("target.extract"):
        t = extract_modalities(batch.targets, params.target, sub("target")) if len(mods) == 3 else _extract_one(batch.targets, params.target, sub("target"))
    features: dict[str, Tensor] = {}
    volumes: dict[str, np.ndarray] = {}
    align = None
    b = len(batch)
    full = len(mods) == 3
    if full and b >= 2:
        with scope("alignment"):
            side = {}
            for kind, triple in (("drug", d), ("target", t)):
                side[kind], v = modality_gram_loss(*triple, tau=cfg.temperature, negatives=cfg.gram_negatives)
                volumes[kind] = v.data
            align = (side["drug"] + side["target"]) * 0.5
    if params.bca_early is not None:
        with scope("early"):
            if full:
                d_e = mca(*d, params.mca_drug, sub("mca_drug"))
                t_e = mca(*t, params.mca_target, sub("mca_target"))
            else:
                (d_e,), (t_e,) = _select(d, mods).values(), _select(t, mods).values()
            features["early"] = bca(d_e, t_e, params.bca_early, cfg.bca_mode, sub("bca_early"))
    if cfg.variant != "only_early":
        inter = _interactions(d, t, params.late, cfg, sub("late"))
        features.update(inter)
        if full:
            with scope("dof"):
                features["later"] = dof(
                    inter["t"], inter["g"], inter["f"], params.dof, cfg.threshold, cfg.residual, mask_override, sub("dof")
                )
        else:
            features["later"] = inter[mods[0]]
    with scope("output"):
        if "early" in features and "later" in features:
            joined = ops.concat([features["early"], features["later"]], axis=-1)
        else:
            joined = features.get("early", features.get("later"))
        features["output"] = params.output(joined)
    pooled = {k: ops.mean(v, axis=-2) for k, v in features.items()}
    logits = {}
    with scope("heads"):
        for name in cfg.branches:
            logits[name] = params.heads[name](pooled[name])
    return ForwardOutputs(logits, pooled, align, volumes, trace)


def _extract_one(batch: EntityBatch, p: ExtractorParams, trace):
    from .extractors import graph_branch, sequence_branch
    from .tensor import as_tensor

    out = [None, None, None]
    if p.textual is not None:
        out[0] = sequence_branch(as_tensor(batch.textual), p.textual, trace.setdefault("textual", {}) if trace is not None else None)
    if p.structural is not None:
        out[1] = graph_branch(as_tensor(batch.nodes), batch.adjacency, batch.counts, p.structural,
                              trace.setdefault("structural", {}) if trace is not None else None)
    if p.functional is not None:
        out[2] = sequence_branch(as_tensor(batch.functional), p.functional, trace.setdefault("functional", {}) if trace is not None else None)
    return tuple(out)


def _interactions(d, t, p: LateParams, cfg: ModelConfig, trace):
    if len(cfg.modalities) == 3:
        ft, fg, ff = per_modality_interactions(d, t, p, cfg.bca_mode, trace)
        return {"t": ft, "g": fg, "f": ff}
    from .fusion_late import hgcnf

    m = cfg.modalities[0]
    i = MODALITIES.index(m)
    sub = trace.setdefault({"t": "textual", "g": "structural", "f": "functional"}[m], {}) if trace is not None else None
    with scope(f"late.{m}"):
        if m == "g":
            return {m: hgcnf(d[i], t[i], p.structural, sub)}
        return {m: bca(d[i], t[i], p.textual if m == "t" else p.functional, cfg.bca_mode, sub)}


def cross_entropy(logits: Tensor, labels: np.ndarray, pos_weight: float | None = None) -> Tensor:
    """Mean negative log-likelihood of two-class logits (``B×2``)."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    onehot = np.eye(2, dtype=logits.dtype)[labels.astype(np.int64)]
    nll = -ops.sum(ops.log_softmax(logits, axis=-1) * onehot, axis=-1)
    if pos_weight is None:
        return ops.mean(nll)
    w = np.where(labels == 1, pos_weight, 1.0).astype(logits.dtype)
    return ops.sum(nll * w) * (1.0 / float(w.sum()))


def branch_losses(outputs: ForwardOutputs, labels, pos_weight: float | None = None) -> dict[str, Tensor]:
    return {k: cross_entropy(v, labels, pos_weight) for k, v in outputs.logits.items()}


def classification_loss(outputs: ForwardOutputs, labels, pos_weight: float | None = None) -> Tensor:
    """Branch cross-entropies divided by 6, plus the full-weight output branch."""
    ce = branch_losses(outputs, labels, pos_weight)
    aux = [v for k, v in ce.items() if k != "output"]
    total = aux[0]
    for v in aux[1:]:
        total = total + v
    return total * (1.0 / 6.0) + ce["output"]


def total_loss(lc: Tensor, lg: Tensor | None, lam: float) -> Tensor:
    """``(L_c + λ·L_g) / (1 + λ)``; without an alignment term this is ``L_c / (1 + λ)``."""
    if lam < 0:
        raise ValueError("loss weight must be non-negative")
    if lg is None or lam == 0:
        return lc * (1.0 / (1.0 + lam))
    return (lc + lg * lam) * (1.0 / (1.0 + lam))


def predict_proba(pairs, params: ModelParams, cfg: ModelConfig, batch_size: int = 64) -> np.ndarray:
    """Positive-class probability of the output head for each pair."""
    pairs = list(pairs)
    scores = []
    with no_grad():
        for i in range(0, len(pairs), batch_size):
            out = forward(make_batch(pairs[i : i + batch_size]), params, cfg)
            scores.append(out.probabilities()[:, 1])
    return np.concatenate(scores) if scores else np.zeros(0)


def config_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)
