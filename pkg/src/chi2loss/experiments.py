"""Desk-scale experiment runners.

Every runner takes an :class:`ExperimentConfig`, writes plot-ready CSVs
(header row, fixed column order, shortest round-trip float repr) into
``cfg.out_dir`` and returns an :class:`ExperimentReport` whose ``checks``
map names to booleans.  Runs are single-threaded; sweep point ``i`` trains
with seed ``cfg.seed ^ i``.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import BlobSpec, Dataset, load_mnist, make_blobs, subset
from .errors import CheckFailure, ConfigError
from .gradcheck import run_gradcheck
from .losses import (
    LOSS_KINDS,
    SmoothingConfig,
    chi_square_grad_wrt_logits,
    chi_square_loss,
    cross_entropy_grad_wrt_logits,
    cross_entropy_loss,
    one_hot,
    smooth_labels,
)
from .nn import forward, init_model, load_checkpoint, save_checkpoint, softmax
from .stats import empirical_corr_last_row
from .training import TrainConfig, accuracy, train

log = logging.getLogger(__name__)

DATA_ENV = "CHI2LOSS_DATA_DIR"
_REPO_DATA = Path(__file__).resolve().parents[2] / "data" / "mnist"


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat settings shared by all subcommands; ``None`` means "experiment default"."""

    seed: int = 0
    epochs: int = 20
    batch_size: int = 64
    alpha: float = 0.1
    lr: float = 1e-2
    lr_ce: float = 1e-1
    loss: Optional[str] = None
    penultimate_dim: Optional[Tuple[int, ...]] = None
    penultimate_activation: str = "identity"
    hidden: Optional[Tuple[int, ...]] = None
    classes: Optional[Tuple[int, ...]] = None
    alphas: Optional[Tuple[float, ...]] = None
    couple_lr: bool = False
    data_dir: Optional[str] = None
    synthetic: bool = False
    train_size: int = 10_000
    test_size: int = 2_000
    blob_dim: int = 16
    blob_spread: float = 0.1
    blob_train_per_class: int = 100
    blob_test_per_class: int = 40
    grid_min: float = -10.0
    grid_max: float = 10.0
    grid_step: float = 0.1
    trials: int = 100
    tolerance: float = 1e-5
    layer_dims: Optional[Tuple[int, ...]] = None
    out_dir: str = "runs"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        for a in self.alphas or ():
            if not 0.0 < a < 1.0:
                raise ConfigError(f"alpha must lie in (0, 1), got {a}")
        if self.loss is not None and self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if not (self.lr > 0 and self.lr_ce > 0):
            raise ConfigError("learning rates must be positive")

    @property
    def losses(self) -> Tuple[str, ...]:
        return (self.loss,) if self.loss else LOSS_KINDS

    def lr_for(self, kind: str) -> float:
        return self.lr if kind == "chi2" else self.lr_ce


CONFIG_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


@dataclass
class ExperimentReport:
    name: str
    config: dict
    history: List[dict] = field(default_factory=list)
    results: List[dict] = field(default_factory=list)
    metrics: Dict[str, object] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    csv_paths: Dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


@dataclass(frozen=True)
class SurfaceGrid:
    """Loss and logit-gradient norm over a rectangular 2-logit grid."""

    kind: str
    z1: np.ndarray
    z2: np.ndarray
    label: np.ndarray
    loss: np.ndarray       # shape (len(z1), len(z2)), loss[i, j] at (z1[i], z2[j])
    grad_norm: np.ndarray

    def active_fraction(self, rel=0.01) -> float:
        """Fraction of grid points whose gradient norm exceeds ``rel * max``."""
        return float(np.mean(self.grad_norm > rel * self.grad_norm.max()))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return str(path)


def default_data_dir() -> Path:
    if os.environ.get(DATA_ENV):
        return Path(os.environ[DATA_ENV])
    local = Path("data") / "mnist"
    return local if local.exists() else _REPO_DATA


def _balanced_cap(ds: Dataset, size: int, seed: int) -> Dataset:
    if size >= len(ds):
        return ds
    return subset(ds, max(1, size // ds.n_classes), seed)


def load_image_data(cfg: ExperimentConfig):
    """MNIST train/test pair capped at ``train_size``/``test_size``, or 10-class blobs."""
    if cfg.synthetic:
        spec = BlobSpec(10, cfg.blob_dim, cfg.blob_train_per_class + cfg.blob_test_per_class,
                        cfg.blob_spread, cfg.seed)
        return split_per_class(make_blobs(spec), cfg.blob_test_per_class)
    train_ds, test_ds = load_mnist(cfg.data_dir or default_data_dir())
    return _balanced_cap(train_ds, cfg.train_size, cfg.seed), _balanced_cap(test_ds, cfg.test_size, cfg.seed)


def split_per_class(ds: Dataset, test_per_class: int):
    """First ``test_per_class`` rows of each class become the test set."""
    test_mask = np.zeros(len(ds), dtype=bool)
    for c in range(ds.n_classes):
        test_mask[np.flatnonzero(ds.labels == c)[:test_per_class]] = True
    return (Dataset(ds.features[~test_mask], ds.labels[~test_mask], ds.n_classes),
            Dataset(ds.features[test_mask], ds.labels[test_mask], ds.n_classes))


def _train_run(name, dims, train_ds, test_ds, cfg: ExperimentConfig, kind, seed, alpha, lr, report):
    model = init_model(dims, seed, cfg.penultimate_activation)
    tcfg = TrainConfig(lr, cfg.epochs, cfg.batch_size, seed, kind, alpha)
    result = train(model, train_ds, test_ds, tcfg)
    for rec in result.history:
        report.history.append({"run": name, **asdict(rec)})

    # the checkpoint must reproduce the reported accuracy exactly
    ckpt_dir = Path(cfg.out_dir) / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(result.model, ckpt_dir / f"{name}.ckpt")
    reloaded = accuracy(load_checkpoint(ckpt), test_ds)
    if reloaded != result.final.test_accuracy:
        raise CheckFailure(f"{name}: checkpoint accuracy {reloaded} != reported {result.final.test_accuracy}")
    if kind == "chi2" and min(min(r.train_loss, r.test_loss) for r in result.history) < 0:
        report.checks["chi2_loss_non_negative"] = False
    log.info("%s: test accuracy %.4f, test loss %.6g", name, result.final.test_accuracy, result.final.test_loss)
    return result


HISTORY_HEADER = ("run", "epoch", "train_loss", "train_accuracy", "test_loss", "test_accuracy")


def _write_history(report, out):
    report.csv_paths["history"] = write_csv(
        out / f"{report.name}_history.csv", HISTORY_HEADER,
        ([h[k] for k in HISTORY_HEADER] for h in report.history))


def run_exp1(cfg: ExperimentConfig) -> ExperimentReport:
    """Accuracy versus penultimate-layer width for both losses.

    Dumps the test-set penultimate activations of every run (scatter data)
    and the label-0 correlation row over the softmax outputs.
    """
    dims = cfg.penultimate_dim or (2, 3, 4, 5, 8)
    hidden = cfg.hidden or (128,)
    out = Path(cfg.out_dir)
    train_ds, test_ds = load_image_data(cfg)
    report = ExperimentReport("exp1", _config_dict(cfg))
    report.checks["chi2_loss_non_negative"] = True
    acc = {}
    corr_rows = []
    for i, d in enumerate(dims):
        layer_dims = [train_ds.features.shape[1], *hidden, d, train_ds.n_classes]
        for kind in cfg.losses:
            name = f"exp1_{kind}_d{d}"
            res = _train_run(name, layer_dims, train_ds, test_ds, cfg, kind, cfg.seed ^ i, cfg.alpha,
                             cfg.lr_for(kind), report)
            acc[kind, d] = res.final.test_accuracy
            activations, logits = forward(res.model, test_ds.features)
            penultimate = activations[-1]
            report.csv_paths[f"penultimate_{kind}_d{d}"] = write_csv(
                out / f"{name}_penultimate.csv", ["index", "label", *(f"x{j}" for j in range(d))],
                ([j, int(test_ds.labels[j]), *penultimate[j]] for j in range(len(test_ds))))
            corr = empirical_corr_last_row(softmax(logits), test_ds.labels, 0)
            strong = int(np.sum(np.abs(corr) > 0.1))
            corr_rows.append([kind, d, strong, *corr])
            report.results.append({"loss": kind, "penultimate_dim": d, "lr": cfg.lr_for(kind),
                                   "train_accuracy": res.final.train_accuracy,
                                   "test_accuracy": res.final.test_accuracy,
                                   "test_loss": res.final.test_loss, "strong_corr_dims": strong})

    report.csv_paths["accuracy"] = write_csv(
        out / "exp1_accuracy.csv",
        ["loss", "penultimate_dim", "lr", "train_accuracy", "test_accuracy", "test_loss", "strong_corr_dims"],
        ([r[k] for k in ("loss", "penultimate_dim", "lr", "train_accuracy", "test_accuracy", "test_loss",
                         "strong_corr_dims")] for r in report.results))
    report.csv_paths["label0_corr"] = write_csv(
        out / "exp1_label0_corr.csv",
        ["loss", "penultimate_dim", "strong_corr_dims", *(f"y{j}" for j in range(train_ds.n_classes))],
        corr_rows)
    _write_history(report, out)

    report.metrics["test_accuracy"] = {f"{k}_d{d}": v for (k, d), v in acc.items()}
    if ("chi2", 2) in acc:
        report.checks["chi2_d2_near_half"] = 0.35 <= acc["chi2", 2] <= 0.65
        if ("ce", 2) in acc:
            report.checks["ce_d2_beats_chi2_by_10pts"] = acc["ce", 2] - acc["chi2", 2] >= 0.10
        if ("chi2", 8) in acc:
            report.checks["chi2_d8_gains_20pts"] = acc["chi2", 8] - acc["chi2", 2] >= 0.20
    chi = [acc["chi2", d] for d in sorted(dims) if ("chi2", d) in acc]
    if len(chi) > 1:
        report.checks["chi2_nondecreasing_in_dim"] = all(b >= a - 0.02 for a, b in zip(chi, chi[1:]))
    _write_report(report, out)
    return report


def fixed_predictor_losses(labels, n_classes, alphas, seed, scale=1.0):
    """Mean chi-square loss of one fixed random softmax predictor per alpha."""
    rng = np.random.default_rng(seed)
    preds = softmax(scale * rng.normal(size=(len(labels), n_classes)))
    hard = one_hot(labels, n_classes)
    return [chi_square_loss(preds, smooth_labels(hard, SmoothingConfig(a, n_classes))) for a in alphas]


def log_log_slope(alphas, losses) -> float:
    """Least-squares slope of ``log(L + 1)`` against ``log(1 / alpha)``."""
    x = np.log(1.0 / np.asarray(alphas, dtype=np.float64))
    y = np.log(np.asarray(losses, dtype=np.float64) + 1.0)
    return float(np.polyfit(x, y, 1)[0])


def run_exp2(cfg: ExperimentConfig) -> ExperimentReport:
    """Final chi-square loss/accuracy across smoothing strengths."""
    alphas = tuple(sorted(cfg.alphas or (0.02, 0.05, 0.1, 0.2, 0.3)))
    pen = (cfg.penultimate_dim or (32,))[0]
    hidden = cfg.hidden or (128,)
    out = Path(cfg.out_dir)
    train_ds, test_ds = load_image_data(cfg)
    report = ExperimentReport("exp2", _config_dict(cfg))
    report.checks["chi2_loss_non_negative"] = True

    fixed = fixed_predictor_losses(test_ds.labels, test_ds.n_classes, alphas, cfg.seed)
    layer_dims = [train_ds.features.shape[1], *hidden, pen, train_ds.n_classes]
    for i, a in enumerate(alphas):
        lr = cfg.lr * a / 0.1 if cfg.couple_lr else cfg.lr
        res = _train_run(f"exp2_a{a:g}", layer_dims, train_ds, test_ds, cfg, "chi2", cfg.seed ^ i, a, lr, report)
        report.results.append({"alpha": a, "lr": lr, "train_loss": res.final.train_loss,
                               "test_loss": res.final.test_loss, "test_accuracy": res.final.test_accuracy,
                               "fixed_predictor_loss": fixed[i]})
    cols = ("alpha", "lr", "train_loss", "test_loss", "test_accuracy", "fixed_predictor_loss")
    report.csv_paths["alpha"] = write_csv(out / "exp2_alpha.csv", cols,
                                          ([r[c] for c in cols] for r in report.results))
    _write_history(report, out)

    trained = [r["test_loss"] for r in report.results]
    inversions = sum(1 for x, y in zip(trained, trained[1:]) if y > x)
    report.metrics.update({
        "slope_fixed_predictor": log_log_slope(alphas, fixed),
        "slope_trained": log_log_slope(alphas, trained) if np.all(np.isfinite(trained)) else float("nan"),
        "trained_inversions": inversions,
    })
    report.checks["fixed_slope_in_0.8_1.2"] = 0.8 <= report.metrics["slope_fixed_predictor"] <= 1.2
    report.checks["trained_loss_decreasing_in_alpha"] = inversions <= 1
    if 0.02 in alphas and 0.1 in alphas:
        report.checks["loss_a0.02_above_a0.1"] = trained[alphas.index(0.02)] > trained[alphas.index(0.1)]
    _write_report(report, out)
    return report


def run_exp3(cfg: ExperimentConfig) -> ExperimentReport:
    """Accuracy of both losses as the number of blob classes grows."""
    counts = tuple(sorted(cfg.classes or (5, 10, 20, 50)))
    pen = (cfg.penultimate_dim or (16,))[0]
    hidden = cfg.hidden or (64,)
    out = Path(cfg.out_dir)
    report = ExperimentReport("exp3", _config_dict(cfg))
    report.checks["chi2_loss_non_negative"] = True
    acc = {}
    for i, n in enumerate(counts):
        if n < 2:
            raise ConfigError(f"class counts must be >= 2, got {n}")
        spec = BlobSpec(n, cfg.blob_dim, cfg.blob_train_per_class + cfg.blob_test_per_class,
                        cfg.blob_spread, cfg.seed ^ i)
        train_ds, test_ds = split_per_class(make_blobs(spec), cfg.blob_test_per_class)
        for kind in cfg.losses:
            res = _train_run(f"exp3_{kind}_n{n}", [cfg.blob_dim, *hidden, pen, n], train_ds, test_ds, cfg,
                             kind, cfg.seed ^ i, cfg.alpha, cfg.lr_for(kind), report)
            acc[kind, n] = res.final.test_accuracy
            report.results.append({"loss": kind, "n_classes": n, "lr": cfg.lr_for(kind),
                                   "train_accuracy": res.final.train_accuracy,
                                   "test_accuracy": res.final.test_accuracy, "test_loss": res.final.test_loss})
    cols = ("loss", "n_classes", "lr", "train_accuracy", "test_accuracy", "test_loss")
    report.csv_paths["classes"] = write_csv(out / "exp3_classes.csv", cols,
                                            ([r[c] for c in cols] for r in report.results))
    _write_history(report, out)

    if set(cfg.losses) == set(LOSS_KINDS):
        gaps = {n: acc["ce", n] - acc["chi2", n] for n in counts}
        report.metrics["accuracy_gap"] = {str(n): g for n, g in gaps.items()}
        report.csv_paths["gap"] = write_csv(out / "exp3_gap.csv", ("n_classes", "gap"), gaps.items())
        if counts[0] == 5:
            report.checks["n5_both_above_0.9"] = min(acc["ce", 5], acc["chi2", 5]) > 0.9
        if len(counts) > 1:
            report.checks["gap_grows_with_classes"] = gaps[counts[-1]] >= gaps[counts[0]]
    _write_report(report, out)
    return report


def compute_surface(kind: str, label, z1, z2) -> SurfaceGrid:
    """Loss through softmax and its logit-gradient norm at every ``(z1[i], z2[j])``."""
    label = np.asarray(label, dtype=np.float64)
    g1, g2 = np.meshgrid(z1, z2, indexing="ij")
    logits = np.stack([g1.ravel(), g2.ravel()], axis=1)
    p = softmax(logits)
    if kind == "chi2":
        loss = chi_square_loss(p, label, reduction="none")
        grad = chi_square_grad_wrt_logits(logits, np.broadcast_to(label, logits.shape))
    elif kind == "ce":
        loss = cross_entropy_loss(p, label, reduction="none")
        grad = cross_entropy_grad_wrt_logits(logits, np.broadcast_to(label, logits.shape))
    else:
        raise ConfigError(f"unknown loss kind {kind!r}")
    shape = g1.shape
    return SurfaceGrid(kind, np.asarray(z1), np.asarray(z2), label,
                       loss.reshape(shape), np.linalg.norm(grad, axis=1).reshape(shape))


def grid_axis(lo, hi, step) -> np.ndarray:
    if not (np.isfinite(lo) and np.isfinite(hi) and step > 0 and hi > lo):
        raise ConfigError(f"degenerate grid: range [{lo}, {hi}] with step {step}")
    count = int(round((hi - lo) / step)) + 1
    if count < 2:
        raise ConfigError("grid needs at least 2 points per axis")
    return np.linspace(lo, hi, count)


def emit_surface(cfg: ExperimentConfig):
    """2-class error surfaces for both losses; returns ``(grids, report)``."""
    axis = grid_axis(cfg.grid_min, cfg.grid_max, cfg.grid_step)
    label = smooth_labels(np.array([1.0, 0.0]), SmoothingConfig(cfg.alpha, 2))
    out = Path(cfg.out_dir)
    report = ExperimentReport("surface", _config_dict(cfg))
    grids = {}
    for kind in LOSS_KINDS:
        grid = compute_surface(kind, label, axis, axis)
        grids[kind] = grid
        rows = ((grid.z1[i], grid.z2[j], grid.loss[i, j], grid.grad_norm[i, j])
                for i in range(len(grid.z1)) for j in range(len(grid.z2)))
        report.csv_paths[kind] = write_csv(out / f"surface_{kind}.csv", ("z1", "z2", "loss", "grad_norm"), rows)
        report.metrics[f"active_fraction_{kind}"] = grid.active_fraction()
        report.metrics[f"min_loss_{kind}"] = float(grid.loss.min())
    chi = grids["chi2"]
    diag = np.diag(chi.loss)
    report.checks["chi2_loss_non_negative"] = bool(chi.loss.min() >= 0)
    report.checks["chi2_constant_on_diagonal"] = bool(np.ptp(diag) < 1e-12)
    report.checks["chi2_gradient_region_smaller"] = (
        report.metrics["active_fraction_chi2"] < report.metrics["active_fraction_ce"])
    _write_report(report, out)
    return grids, report


def gradcheck_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    gc = run_gradcheck(seed=cfg.seed, trials=cfg.trials, tolerance=cfg.tolerance,
                       layer_dims=cfg.layer_dims, kinds=cfg.losses)
    report = ExperimentReport("gradcheck", _config_dict(cfg))
    report.metrics["max_relative_error"] = gc.max_relative_error
    report.metrics["worst"] = gc.worst.name
    report.metrics["checks_run"] = len(gc.results)
    report.checks["max_relative_error_below_tolerance"] = gc.passed
    return report


def _config_dict(cfg):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}


def _write_report(report, out):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{report.name}_report.json").write_text(report.to_json() + "\n")


RUNNERS = {"exp1": run_exp1, "exp2": run_exp2, "exp3": run_exp3,
           "surface": lambda cfg: emit_surface(cfg)[1], "gradcheck": gradcheck_experiment}

