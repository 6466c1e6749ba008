"""Central finite-difference checks for the loss gradients and for backprop."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import CheckFailure, ConfigError
from .losses import (
    LOSS_KINDS,
    SmoothingConfig,
    batch_loss,
    chi_square_grad_wrt_logits,
    chi_square_loss,
    cross_entropy_grad_wrt_logits,
    cross_entropy_loss,
    loss_and_grad,
    one_hot,
    smooth_labels,
)
from .nn import backward, forward, init_model, softmax


def central_difference(f, x, h=1e-6) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by ``(f(x+h e_i) - f(x-h e_i)) / 2h``."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-12) -> float:
    """``||a - n|| / max(||a||, ||n||)`` over a whole array."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


@dataclass
class CheckResult:
    name: str
    relative_error: float


@dataclass
class GradcheckReport:
    tolerance: float
    results: List[CheckResult] = field(default_factory=list)

    @property
    def worst(self) -> CheckResult:
        return max(self.results, key=lambda r: r.relative_error)

    @property
    def max_relative_error(self) -> float:
        return self.worst.relative_error if self.results else 0.0

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def raise_on_failure(self):
        if not self.passed:
            w = self.worst
            raise CheckFailure(
                f"gradient check failed: {w.name} has relative error {w.relative_error:.3e} "
                f"(tolerance {self.tolerance:.1e})")


def check_logit_gradient(kind, logits, label, h=1e-6) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if kind == "chi2":
        analytic = chi_square_grad_wrt_logits(logits, label)
        numeric = central_difference(lambda z: chi_square_loss(softmax(z), label), logits, h)
    elif kind == "ce":
        analytic = cross_entropy_grad_wrt_logits(logits, label)
        numeric = central_difference(lambda z: cross_entropy_loss(softmax(z), label), logits, h)
    else:
        raise ConfigError(f"unknown loss kind {kind!r}")
    if logits.ndim == 2:  # the loss is a batch mean
        analytic = analytic / logits.shape[0]
    return relative_error(analytic, numeric)


def check_model_gradients(model, batch, targets, kind, h=1e-6):
    """Relative error of backprop against finite differences, per parameter array.

    Returns a list of ``(name, error)`` with names like ``W0`` / ``b1``.
    """
    activations, logits = forward(model, batch)
    _, dlogits = loss_and_grad(kind, logits, targets)
    grads = backward(model, activations, dlogits).parameters()
    params = model.parameters()
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        def loss_at(value, i=i):
            trial = list(params)
            trial[i] = value
            return batch_loss(kind, forward(model.replace_parameters(trial), batch)[1], targets)

        name = f"{'W' if i % 2 == 0 else 'b'}{i // 2}"
        out.append((name, relative_error(g, central_difference(loss_at, p, h))))
    return out


def random_config(rng, max_layers=3, max_units=16, max_classes=6):
    n_layers = int(rng.integers(1, max_layers + 1))
    dims = [int(d) for d in rng.integers(1, max_units + 1, size=n_layers)]
    dims.append(int(rng.integers(2, max_classes + 1)))
    return dims


def run_gradcheck(seed=0, trials=100, tolerance=1e-5, layer_dims=None, kinds=LOSS_KINDS,
                  batch_size=4, h=1e-6) -> GradcheckReport:
    """Finite-difference suite over random small networks and both losses.

    Each trial draws an architecture (unless ``layer_dims`` is fixed),
    random weights, a random batch and smoothed labels, then compares both
    the logit gradients and every backprop parameter gradient.
    """
    if layer_dims is not None and len(layer_dims) < 2:
        raise ConfigError(f"gradcheck needs at least 2 layer dims, got {list(layer_dims)}")
    if trials < 1:
        raise ConfigError("need at least one trial")
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)
    for trial in range(trials):
        dims = list(layer_dims) if layer_dims is not None else random_config(rng)
        act = "identity" if rng.random() < 0.5 else "relu"
        model = init_model(dims, seed=int(rng.integers(2**32)), penultimate_activation=act)
        # non-zero biases so ReLU masks are not all tied to the weights
        model = model.replace_parameters(
            [p + (0.1 * rng.normal(size=p.shape) if p.ndim == 1 else 0) for p in model.parameters()])
        batch = rng.normal(size=(batch_size, dims[0]))
        alpha = float(rng.uniform(0.05, 0.5))
        targets = smooth_labels(one_hot(rng.integers(dims[-1], size=batch_size), dims[-1]),
                                SmoothingConfig(alpha, dims[-1]))
        for kind in kinds:
            report.results.append(CheckResult(
                f"trial {trial} {kind} logits", check_logit_gradient(kind, rng.normal(size=(batch_size, dims[-1])), targets, h)))
            for name, err in check_model_gradients(model, batch, targets, kind, h):
                report.results.append(CheckResult(f"trial {trial} {kind} dims={dims} {name}", err))
    return report
