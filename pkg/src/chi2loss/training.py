"""Mini-batch SGD training loop shared by the experiments."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .losses import LOSS_KINDS, SmoothingConfig, batch_loss, loss_and_grad, one_hot, smooth_labels
from .nn import MlpModel, backward, forward, predict, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    loss_kind: str = "chi2"
    alpha: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch size >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float


@dataclass
class TrainResult:
    model: MlpModel
    history: List[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        return self.history[-1]


def soft_targets(ds: Dataset, alpha: float) -> np.ndarray:
    return smooth_labels(one_hot(ds.labels, ds.n_classes), SmoothingConfig(alpha, ds.n_classes))


def evaluate(model: MlpModel, ds: Dataset, kind: str, alpha: float, batch_size: int = 4096):
    """Mean loss (against smoothed labels) and accuracy over ``ds``."""
    targets = soft_targets(ds, alpha)
    total, correct = 0.0, 0
    for start in range(0, len(ds), batch_size):
        stop = start + batch_size
        _, logits = forward(model, ds.features[start:stop])
        total += batch_loss(kind, logits, targets[start:stop]) * logits.shape[0]
        correct += int(np.sum(np.argmax(logits, axis=1) == ds.labels[start:stop]))
    return total / len(ds), correct / len(ds)


def accuracy(model: MlpModel, ds: Dataset) -> float:
    return float(np.mean(predict(model, ds.features) == ds.labels))


def train(model: MlpModel, train_ds: Dataset, test_ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Plain SGD on the mean batch loss; one record per epoch (epoch 0 = before training)."""
    rng = np.random.default_rng(cfg.seed)
    targets = soft_targets(train_ds, cfg.alpha)
    result = TrainResult(model)

    def record(epoch):
        tr = evaluate(result.model, train_ds, cfg.loss_kind, cfg.alpha)
        te = evaluate(result.model, test_ds, cfg.loss_kind, cfg.alpha)
        result.history.append(EpochRecord(epoch, tr[0], tr[1], te[0], te[1]))
        log.debug("epoch %d loss %.6g acc %.4f test acc %.4f", epoch, tr[0], tr[1], te[1])

    record(0)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_ds))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            activations, logits = forward(result.model, train_ds.features[idx])
            _, grad = loss_and_grad(cfg.loss_kind, logits, targets[idx])
            result.model = sgd_step(result.model, backward(result.model, activations, grad), cfg.learning_rate)
        record(epoch)
    return result
