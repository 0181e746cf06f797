"""scikit-learn style wrapper around the network and its training loop.

``X`` is a sequence of ``(drug, target)`` pairs of :class:`ModalFeatures`.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .data.features import ModalFeatures
from .export import attention_maps, stage_embeddings
from .model import EntityDims, InputDims, ModelConfig, predict_proba
from .training import TrainConfig, train

_MODEL_KEYS = tuple(f.name for f in dataclasses.fields(ModelConfig))
_TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))


def check_pairs(X, dims: InputDims | None = None) -> list[tuple[ModalFeatures, ModalFeatures]]:
    """Validate a pair sequence and, when ``dims`` is given, its feature shapes."""
    pairs = list(X)
    if not pairs:
        raise ValueError("expected at least one (drug, target) pair")
    for i, p in enumerate(pairs):
        if len(p) != 2 or not all(isinstance(m, ModalFeatures) for m in p):
            raise TypeError(f"X[{i}] is not a (drug, target) pair of ModalFeatures")
        d, t = p
        if d.entity_kind != "drug" or t.entity_kind != "target":
            raise ValueError(f"X[{i}] must be ordered (drug, target), got ({d.entity_kind}, {t.entity_kind})")
        if dims is not None:
            for m, want in ((d, dims.drug), (t, dims.target)):
                got = EntityDims.of(m)
                if got != want:
                    raise ValueError(f"X[{i}] {m.entity_kind} {m.entity_id!r} has dims {got}, expected {want}")
    return pairs


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64)


class CDIDTIClassifier(ClassifierMixin, BaseEstimator):
    def __init__(
        self,
        hidden_dim=64,
        heads=4,
        gat_layers=3,
        mhsa_layers=1,
        temperature=0.1,
        loss_weight=1.0,
        threshold=0.5,
        bca_mode="cross",
        residual="gram_schmidt",
        gram_negatives="cross",
        variant="full",
        pos_weight=None,
        batch_size=32,
        learning_rate=1e-4,
        lr_decay_interval=10,
        lr_decay_factor=0.5,
        weight_decay=1e-5,
        max_epochs=50,
        beta1=0.9,
        beta2=0.999,
        adam_eps=1e-8,
        seed=0,
        select_best=True,
    ):
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.gat_layers = gat_layers
        self.mhsa_layers = mhsa_layers
        self.temperature = temperature
        self.loss_weight = loss_weight
        self.threshold = threshold
        self.bca_mode = bca_mode
        self.residual = residual
        self.gram_negatives = gram_negatives
        self.variant = variant
        self.pos_weight = pos_weight
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay_interval = lr_decay_interval
        self.lr_decay_factor = lr_decay_factor
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.seed = seed
        self.select_best = select_best

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: getattr(self, k) for k in _MODEL_KEYS})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in _TRAIN_KEYS})

    def fit(self, X, y, X_val=None, y_val=None):
        pairs = check_pairs(X)
        dims = InputDims(EntityDims.of(pairs[0][0]), EntityDims.of(pairs[0][1]))
        check_pairs(pairs, dims)
        y = check_labels(y, len(pairs))
        val_pairs = val_y = None
        if X_val is not None:
            val_pairs = check_pairs(X_val, dims)
            val_y = check_labels(y_val, len(val_pairs))
        cfg = self.model_config()
        result = train(pairs, y, cfg, self.train_config(), val_pairs, val_y, dims=dims)
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.dims_ = dims
        self.config_ = cfg
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        p1 = predict_proba(check_pairs(X, self.dims_), self.params_, self.config_)
        return np.column_stack([1.0 - p1, p1])

    def decision_function(self, X) -> np.ndarray:
        return self.predict_proba(X)[:, 1]

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.5).astype(np.int64)

    def embed(self, X) -> dict[str, np.ndarray]:
        check_is_fitted(self, "params_")
        return stage_embeddings(check_pairs(X, self.dims_), self.params_, self.config_)

    def attention(self, pair) -> dict:
        check_is_fitted(self, "params_")
        return attention_maps(check_pairs([pair], self.dims_)[0], self.params_, self.config_)

    def save(self, path, meta: dict | None = None) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, self.config_, self.dims_, meta)

    @classmethod
    def load(cls, path) -> "CDIDTIClassifier":
        params, cfg, dims, _ = load_checkpoint(path)
        est = cls(**dataclasses.asdict(cfg))
        est.params_, est.config_, est.dims_ = params, cfg, dims
        est.history_, est.best_epoch_ = [], 0
        est.classes_ = np.array([0, 1])
        return est
