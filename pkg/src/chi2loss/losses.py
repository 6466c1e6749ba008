"""Chi-square loss, cross-entropy baseline and label smoothing.

All functions accept a single vector or a batch (one sample per row).  Loss
functions reduce a batch by the arithmetic mean; gradient functions return
one gradient row per sample, unscaled.  ``loss_and_grad`` bundles the two
for training and folds the ``1/N`` of the mean into the gradient.

Chi-square loss of a prediction ``p`` against a label ``y``::

    L = sum_i p_i**2 / y_i - 1

Through softmax ``p = softmax(z)`` its logit gradient has the closed form::

    dL/dz_j = 2 p_j (p_j / y_j - (L + 1))

which follows from the softmax Jacobian ``dp_i/dz_j = p_i (delta_ij - p_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError
from .nn import softmax

LOSS_KINDS = ("chi2", "ce")
CE_CLAMP = 1e-12


@dataclass(frozen=True)
class SmoothingConfig:
    alpha: float
    n_classes: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"smoothing alpha must lie in (0, 1), got {self.alpha}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")


def as_probability_vector(x, tol=1e-9) -> np.ndarray:
    """Validate that ``x`` (vector or rows) lies on the open simplex."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ValidationError("probability vectors need strictly positive finite entries")
    if np.any(np.abs(x.sum(axis=-1) - 1.0) > tol):
        raise ValidationError("probability vector entries must sum to 1")
    return x


def one_hot(indices, n_classes: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= n_classes):
        raise ValidationError(f"class index out of range for {n_classes} classes")
    out = np.zeros(indices.shape + (n_classes,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def smooth_labels(one_hot_labels, cfg: SmoothingConfig) -> np.ndarray:
    """``y * (1 - alpha) + alpha / n`` for hard one-hot labels."""
    y = np.asarray(one_hot_labels, dtype=np.float64)
    if y.shape[-1] != cfg.n_classes:
        raise ShapeError(f"label length {y.shape[-1]} does not match n_classes={cfg.n_classes}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValidationError("smooth_labels expects one-hot vectors (a single 1, zeros elsewhere)")
    return y * (1.0 - cfg.alpha) + cfg.alpha / cfg.n_classes


def _pair(pred, label):
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if label.ndim == 1 and pred.ndim == 2 and pred.shape[1] == label.shape[0]:
        label = np.broadcast_to(label, pred.shape)
    if pred.shape != label.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {label.shape}")
    return pred, label


def _check_chi2_label(label):
    if np.any(label <= 0):
        raise ValidationError(
            "chi-square loss divides by the label; every label entry must be > 0. "
            "Hard (one-hot) labels have zeros: apply label smoothing first (smooth_labels)."
        )
    if np.any(np.abs(np.sum(label, axis=-1) - 1.0) > 1e-9):
        raise ValidationError("chi-square label must sum to 1")


def _reduce(per_sample, reduction):
    if reduction == "none":
        return per_sample
    if reduction != "mean":
        raise ConfigError(f"reduction must be 'mean' or 'none', got {reduction!r}")
    return float(per_sample) if np.ndim(per_sample) == 0 else float(np.mean(per_sample))


def chi_square_loss(pred, label, reduction="mean"):
    """``sum(pred**2 / label) - 1``; ``reduction="none"`` keeps one value per row.

    Evaluated as ``sum((pred - label)**2 / label) + 2 * sum(pred - label)``,
    which equals the expression above for any ``pred`` once the label sums
    to 1, is exactly 0 at ``pred == label`` and avoids cancelling against 1.
    """
    pred, label = _pair(pred, label)
    _check_chi2_label(label)
    diff = pred - label
    return _reduce(np.sum(diff * diff / label, axis=-1) + 2.0 * np.sum(diff, axis=-1), reduction)


def chi_square_grad_wrt_pred(pred, label) -> np.ndarray:
    pred, label = _pair(pred, label)
    _check_chi2_label(label)
    return 2.0 * pred / label


def chi_square_grad_wrt_logits(logits, label) -> np.ndarray:
    logits, label = _pair(logits, label)
    _check_chi2_label(label)
    p = softmax(logits)
    ratio = p / label
    loss_plus_one = np.sum(p * ratio, axis=-1, keepdims=True)
    return 2.0 * p * (ratio - loss_plus_one)


def cross_entropy_loss(pred, label, reduction="mean"):
    pred, label = _pair(pred, label)
    return _reduce(-np.sum(label * np.log(np.maximum(pred, CE_CLAMP)), axis=-1), reduction)


def cross_entropy_grad_wrt_logits(logits, label) -> np.ndarray:
    logits, label = _pair(logits, label)
    return softmax(logits) - label


def loss_and_grad(kind: str, logits, labels):
    """Mean batch loss and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0] if logits.ndim == 2 else 1
    p = softmax(logits)
    if kind == "chi2":
        return chi_square_loss(p, labels), chi_square_grad_wrt_logits(logits, labels) / n
    if kind == "ce":
        return cross_entropy_loss(p, labels), cross_entropy_grad_wrt_logits(logits, labels) / n
    raise ConfigError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def batch_loss(kind: str, logits, labels) -> float:
    p = softmax(logits)
    if kind == "chi2":
        return chi_square_loss(p, labels)
    if kind == "ce":
        return cross_entropy_loss(p, labels)
    raise ConfigError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
