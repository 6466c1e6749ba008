"""Command line entry point: ``chi2loss {exp1,exp2,exp3,surface,gradcheck}``.

Settings come from three layers, later ones winning: built-in defaults,
an optional ``--config`` file of ``key = value`` lines, then flags.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import CheckFailure, ConfigError, ConvergenceError, NumericError
from .experiments import CONFIG_FIELDS, RUNNERS, ExperimentConfig

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _ints(text):
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _floats(text):
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _opt_str(text):
    return None if str(text).strip().lower() in ("", "none", "both") else str(text).strip()


CONVERTERS = {
    "seed": int, "epochs": int, "batch_size": int, "train_size": int, "test_size": int,
    "blob_dim": int, "blob_train_per_class": int, "blob_test_per_class": int, "trials": int,
    "alpha": float, "lr": float, "lr_ce": float, "blob_spread": float, "grid_min": float,
    "grid_max": float, "grid_step": float, "tolerance": float,
    "penultimate_dim": _ints, "hidden": _ints, "classes": _ints, "layer_dims": _ints,
    "alphas": _floats, "couple_lr": _bool, "synthetic": _bool,
    "loss": _opt_str, "data_dir": _opt_str, "out_dir": str, "penultimate_activation": str,
}
assert set(CONVERTERS) == set(CONFIG_FIELDS)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, keys may use dashes."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONVERTERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = CONVERTERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chi2loss", description="Chi-square loss experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value settings file (flags override it)")
    common.add_argument("--loss", choices=("chi2", "ce", "both"), help="restrict to one loss")
    common.add_argument("--alpha", type=float, help="label smoothing strength")
    common.add_argument("--alphas", help="comma-separated smoothing sweep (exp2)")
    common.add_argument("--lr", type=float, help="learning rate for chi-square runs")
    common.add_argument("--lr-ce", type=float, help="learning rate for cross-entropy runs")
    common.add_argument("--couple-lr", action="store_const", const=True,
                        help="exp2: scale the learning rate with alpha (lr * alpha / 0.1)")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--penultimate-dim", help="comma-separated widths (exp1 sweeps all)")
    common.add_argument("--penultimate-activation", choices=("identity", "relu"))
    common.add_argument("--hidden", help="comma-separated hidden widths before the penultimate layer")
    common.add_argument("--classes", help="comma-separated class counts (exp3)")
    common.add_argument("--layer-dims", help="gradcheck: fixed architecture instead of random ones")
    common.add_argument("--trials", type=int, help="gradcheck: number of random configurations")
    common.add_argument("--data-dir", help="directory holding MNIST IDX files")
    common.add_argument("--synthetic", action="store_const", const=True,
                        help="use Gaussian blobs instead of MNIST files")
    common.add_argument("--out-dir", help="where CSVs, checkpoints and reports go")
    common.add_argument("-v", "--verbose", action="store_true")

    helps = {
        "exp1": "accuracy versus penultimate width",
        "exp2": "loss and accuracy versus label smoothing",
        "exp3": "accuracy gap versus number of classes",
        "surface": "2-class error surface grids",
        "gradcheck": "finite-difference gradient suite",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def resolve_config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key, convert in CONVERTERS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = convert(flag)
    if getattr(args, "loss", None) == "both":
        values["loss"] = None
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        report = RUNNERS[args.command](cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CheckFailure, ConvergenceError, NumericError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED

    for key, value in report.metrics.items():
        print(f"{key}: {value}")
    for name, ok in report.checks.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
