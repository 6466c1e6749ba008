"""Pearson's goodness-of-fit statistic, a simplex minimizer for the chi-square
loss, and covariance propagation through a linear map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ShapeError, ValidationError
from .losses import chi_square_grad_wrt_pred, chi_square_loss


def chi_square_statistic(freqs, expected) -> float:
    """``sum_i (f_i - k p_i)**2 / (k p_i)`` with ``k = sum_i f_i``."""
    f = np.asarray(freqs, dtype=np.float64)
    p = np.asarray(expected, dtype=np.float64)
    if f.shape != p.shape or f.ndim != 1:
        raise ShapeError(f"frequency shape {f.shape} vs expected shape {p.shape}")
    if f.size < 2:
        raise ValidationError("need at least 2 classes")
    if np.any(f < 0) or np.any(f != np.round(f)):
        raise ValidationError("frequencies must be non-negative integers")
    if np.any(p <= 0):
        raise ValidationError("expected probabilities must be strictly positive")
    k = f.sum()
    if k < 1:
        raise ValidationError("need at least one observation")
    kp = k * p
    return float(np.sum((f - kp) ** 2 / kp))


def chi_square_statistic_rewritten(freqs, expected) -> float:
    """Same statistic as ``k * (sum_i f_i**2 / (k**2 p_i) - 1)``."""
    f = np.asarray(freqs, dtype=np.float64)
    p = np.asarray(expected, dtype=np.float64)
    k = f.sum()
    return float(k * (np.sum(f * f / (k * k * p)) - 1.0))


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}``, row-wise for 2-D input.

    Sort-based method: with ``u`` sorted descending, take the largest ``r``
    such that ``u_r + (1 - sum_{j<=r} u_j) / r > 0`` and shift everything
    by that threshold before clipping at zero.
    """
    v = np.asarray(v, dtype=np.float64)
    rows = np.atleast_2d(v)
    u = -np.sort(-rows, axis=1)
    css = np.cumsum(u, axis=1)
    ranks = np.arange(1, rows.shape[1] + 1)
    positive = u + (1.0 - css) / ranks > 0
    rho = rows.shape[1] - 1 - np.argmax(positive[:, ::-1], axis=1)
    theta = (1.0 - css[np.arange(rows.shape[0]), rho]) / (rho + 1)
    out = np.maximum(rows + theta[:, None], 0.0)
    return out.reshape(v.shape)


def minimize_on_simplex(label, starts: int = 50, tol: float = 1e-10, *, seed: int = 0,
                        step=None, max_iter: int = 10_000, xtol: float = 1e-13) -> np.ndarray:
    """Projected gradient descent on the chi-square loss over the simplex.

    Runs from ``starts`` random interior points (Dirichlet(1) draws) and
    returns the minimizer with the lowest loss; ties go to the earliest
    start.  The default step is ``min(0.1 / n, 0.5 * min(label))``: the loss
    Hessian is ``diag(2 / label)``, so steps at or above ``min(label)``
    oscillate on the smallest coordinates.

    All starts advance together as rows of one array; the ``trajectory`` on
    a ConvergenceError is the mean loss over starts per iteration.

    Raises ConvergenceError if no start reaches a loss below ``tol``.
    """
    y = np.asarray(label, dtype=np.float64)
    if y.ndim != 1 or np.any(y <= 0):
        raise ValidationError("label must be a strictly positive (smoothed) vector")
    if starts < 1:
        raise ValidationError("need at least one start")
    n = y.size
    if step is None:
        step = 0.9 * y.min()
    rng = np.random.default_rng(seed)

    x = rng.dirichlet(np.ones(n), size=starts)
    trajectory = [chi_square_loss(x, y)]
    for _ in range(max_iter):
        x_next = project_simplex(x - step * chi_square_grad_wrt_pred(x, y))
        moved = np.max(np.abs(x_next - x))
        x = x_next
        trajectory.append(chi_square_loss(x, y))
        if moved < xtol:
            break
    losses = chi_square_loss(x, y, reduction="none")
    best = int(np.argmin(losses))
    if not losses[best] < tol:
        raise ConvergenceError(
            f"best loss {losses[best]:.3e} after {max_iter} iterations is not below {tol:.1e}", trajectory)
    return x[best]


@dataclass(frozen=True)
class CovarianceBundle:
    """Joint covariance of (penultimate features X, label position l) plus the map Phi.

    ``sigma_dd`` is ``Cov(X)`` (d x d), ``sigma_dl`` is ``Cov(l, X)`` as a
    length-d row, ``sigma_ll`` is ``Var(l)`` and ``phi`` maps X to the
    n outputs (n x d).
    """

    sigma_dd: np.ndarray
    sigma_dl: np.ndarray
    sigma_ll: float
    phi: np.ndarray

    def __post_init__(self):
        d = self.sigma_dd.shape[0]
        if self.sigma_dd.shape != (d, d):
            raise ShapeError(f"sigma_dd must be square, got {self.sigma_dd.shape}")
        if self.sigma_dl.shape != (d,):
            raise ShapeError(f"sigma_dl has shape {self.sigma_dl.shape}, expected ({d},)")
        if self.phi.ndim != 2 or self.phi.shape[1] != d:
            raise ShapeError(f"phi has shape {self.phi.shape}, expected (n, {d})")
        if not np.allclose(self.sigma_dd, self.sigma_dd.T, atol=1e-9):
            raise ValidationError("sigma_dd is not symmetric")
        if np.linalg.eigvalsh(self.sigma_dd).min() < -1e-9:
            raise ValidationError("sigma_dd is not positive semi-definite")

    def joint(self) -> np.ndarray:
        d = self.sigma_dd.shape[0]
        out = np.empty((d + 1, d + 1))
        out[:d, :d] = self.sigma_dd
        out[d, :d] = out[:d, d] = self.sigma_dl
        out[d, d] = self.sigma_ll
        return out


def transform_covariance(bundle: CovarianceBundle):
    """Blocks of ``T Sigma T^T`` with ``T = [[phi, 0], [0, 1]]``.

    Returns ``(phi Sigma_dd phi^T, sigma_dl phi^T, sigma_ll)``; the middle
    block is the label row of the output covariance.
    """
    phi = bundle.phi
    return phi @ bundle.sigma_dd @ phi.T, bundle.sigma_dl @ phi.T, float(bundle.sigma_ll)


def empirical_cov_last_row(values, labels, target_class: int) -> np.ndarray:
    """Covariance of ``1[label == target_class]`` with every column of ``values``.

    Uses the population normalisation (divide by N).
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    if values.ndim != 2 or values.shape[0] == 0:
        raise ValidationError("need a non-empty 2-D array of values")
    if labels.shape != (values.shape[0],):
        raise ShapeError(f"{values.shape[0]} rows but labels have shape {labels.shape}")
    indicator = (labels == target_class).astype(np.float64)
    centered = values - values.mean(axis=0)
    return (indicator - indicator.mean()) @ centered / values.shape[0]


def empirical_corr_last_row(values, labels, target_class: int) -> np.ndarray:
    """Correlation version of ``empirical_cov_last_row``; constant columns give 0."""
    cov = empirical_cov_last_row(values, labels, target_class)
    values = np.asarray(values, dtype=np.float64)
    indicator = (np.asarray(labels) == target_class).astype(np.float64)
    spread = values.std(axis=0)
    # rounding leaves ~1e-16 spread on constant columns
    spread[spread <= 1e-12 * (1.0 + np.abs(values.mean(axis=0)))] = 0.0
    denom = spread * indicator.std()
    return np.divide(cov, denom, out=np.zeros_like(cov), where=denom > 0)
