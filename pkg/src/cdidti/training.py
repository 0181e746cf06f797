"""Adam optimisation of the full objective with step learning-rate decay and
model selection on validation AUROC."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .metrics import compute_metrics
from .model import (
    ModelConfig,
    ModelParams,
    classification_loss,
    forward,
    init_params,
    make_batch,
    predict_proba,
    total_loss,
)
from .params import named_tensors
from .tensor import NonFiniteError

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, detail: str):
        super().__init__(f"training diverged in epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    lr_decay_interval: int = 10
    lr_decay_factor: float = 0.5
    weight_decay: float = 1e-5
    max_epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    select_best: bool = True

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "lr_decay_interval", "lr_decay_factor", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


class Adam:
    """Adam with L2 weight decay added to the gradient."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = [t for _, t in named_tensors(params)]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(t.data) for t in self.params]
        self.v = [np.zeros_like(t.data) for t in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index chunks of near-equal size, none larger than ``batch_size``.

    Chunks have at least two items whenever ``n >= 2`` (the alignment loss
    needs in-batch contrast).
    """
    perm = rng.permutation(n)
    k = max(1, -(-n // batch_size))
    return [c for c in np.array_split(perm, k) if c.size]


def loss_on_batch(batch, params: ModelParams, cfg: ModelConfig, mask_override=None):
    out = forward(batch, params, cfg, mask_override=mask_override)
    lc = classification_loss(out, batch.labels, cfg.pos_weight)
    return total_loss(lc, out.align_loss, cfg.loss_weight), out


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def train(
    train_pairs,
    train_labels,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    val_pairs=None,
    val_labels=None,
    params: ModelParams | None = None,
    dims=None,
) -> TrainResult:
    """Fit the network; returns the selected parameters and per-epoch history.

    History entries hold ``epoch, train_loss, val_acc, val_f1, val_auroc,
    val_auprc`` (validation fields are ``None`` without a validation set).
    The best-validation-AUROC parameters are returned when ``select_best``.
    """
    train_pairs = list(train_pairs)
    y = np.asarray(train_labels, dtype=np.int64)
    if len(train_pairs) != y.size or y.size == 0:
        raise ValueError("need a nonempty training set with one label per pair")
    if params is None:
        if dims is None:
            raise ValueError("pass either params or input dims")
        params = init_params(model_cfg, dims, train_cfg.seed)
    opt = Adam(params, train_cfg.learning_rate, (train_cfg.beta1, train_cfg.beta2), train_cfg.adam_eps, train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    history: list[dict] = []
    best_auc, best_state, best_epoch = -np.inf, None, 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        opt.lr = train_cfg.learning_rate * train_cfg.lr_decay_factor ** ((epoch - 1) // train_cfg.lr_decay_interval)
        total, count = 0.0, 0
        for idx in batches(y.size, train_cfg.batch_size, rng):
            batch = make_batch([train_pairs[i] for i in idx], y[idx])
            try:
                loss, _ = loss_on_batch(batch, params, model_cfg)
                opt.zero_grad()
                loss.backward()
            except NonFiniteError as exc:
                raise DivergenceError(epoch, str(exc)) from exc
            if not np.isfinite(loss.item()):
                raise DivergenceError(epoch, "loss is NaN")
            opt.step()
            total += loss.item() * idx.size
            count += idx.size
        rec = {"epoch": epoch, "train_loss": total / count, "val_acc": None, "val_f1": None, "val_auroc": None, "val_auprc": None}
        if val_pairs is not None and len(val_pairs):
            try:
                rep = compute_metrics(predict_proba(val_pairs, params, model_cfg), val_labels)
            except NonFiniteError as exc:
                raise DivergenceError(epoch, str(exc)) from exc
            rec.update(val_acc=rep.accuracy, val_f1=rep.f1, val_auroc=rep.auroc, val_auprc=rep.auprc)
            if train_cfg.select_best and rep.auroc is not None and rep.auroc > best_auc:
                best_auc, best_epoch = rep.auroc, epoch
                best_state = [t.data.copy() for _, t in named_tensors(params)]
        history.append(rec)
        log.info("epoch %d loss %.4f val_auroc %s", epoch, rec["train_loss"], rec["val_auroc"])
    if best_state is not None:
        for (_, t), data in zip(named_tensors(params), best_state):
            t.data = data
    else:
        best_epoch = train_cfg.max_epochs
    return TrainResult(params, history, best_epoch)


def clone_params(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)
