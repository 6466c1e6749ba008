import csv
import json

import numpy as np
import pytest

from chi2loss.cli import CONVERTERS, build_parser, main, read_config_file, resolve_config
from chi2loss.errors import ConfigError
from chi2loss.experiments import (
    ExperimentConfig,
    compute_surface,
    emit_surface,
    fixed_predictor_losses,
    gradcheck_experiment,
    grid_axis,
    log_log_slope,
    run_exp1,
    run_exp2,
    run_exp3,
    write_csv,
)
from chi2loss.gradcheck import run_gradcheck
from chi2loss.losses import SmoothingConfig, smooth_labels

LABEL = smooth_labels(np.array([1.0, 0.0]), SmoothingConfig(0.1, 2))


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def grids():
    axis = grid_axis(-10, 10, 0.1)
    return {k: compute_surface(k, LABEL, axis, axis) for k in ("chi2", "ce")}


class TestSurface:
    def test_axis(self):
        axis = grid_axis(-10, 10, 0.1)
        assert len(axis) == 201 and axis[0] == -10 and axis[-1] == 10

    def test_constant_on_diagonal(self, grids):
        # softmax is (1/2, 1/2) wherever z1 == z2: 0.25/0.95 + 0.25/0.05 - 1
        diag = np.diag(grids["chi2"].loss)
        np.testing.assert_allclose(diag, 0.25 / 0.95 + 0.25 / 0.05 - 1, rtol=0, atol=1e-12)

    def test_minimum_near_label_logit_gap(self, grids):
        g = grids["chi2"]
        i, j = np.unravel_index(np.argmin(g.loss), g.loss.shape)
        # the exact minimiser has z1 - z2 = log(0.95 / 0.05)
        assert abs((g.z1[i] - g.z2[j]) - np.log(19)) <= 0.1 + 1e-9
        assert g.loss.min() < 1e-3

    def test_non_negative(self, grids):
        assert grids["chi2"].loss.min() >= 0
        assert grids["ce"].loss.min() >= 0

    def test_gradient_region_smaller_for_chi2(self, grids):
        assert grids["chi2"].active_fraction() < grids["ce"].active_fraction()

    @pytest.mark.parametrize("lo,hi,step", [(1, 1, 0.1), (1, 0, 0.1), (0, 1, 0.0), (0, 1, -1), (0, np.inf, 1)])
    def test_degenerate_grid(self, lo, hi, step):
        with pytest.raises(ConfigError):
            grid_axis(lo, hi, step)

    def test_emit_writes_csvs(self, tmp_path):
        grids, report = emit_surface(ExperimentConfig(out_dir=str(tmp_path), grid_min=-2, grid_max=2, grid_step=0.5))
        rows = _rows(report.csv_paths["chi2"])
        assert list(rows[0]) == ["z1", "z2", "loss", "grad_norm"]
        assert len(rows) == 81
        assert float(rows[0]["loss"]) == grids["chi2"].loss[0, 0]
        assert report.passed
        assert json.loads((tmp_path / "surface_report.json").read_text())["name"] == "surface"


class TestGradcheckExperiment:
    def test_default_passes(self):
        report = run_gradcheck(seed=0, trials=10)
        assert report.passed and report.max_relative_error < 1e-5

    def test_deterministic(self):
        a, b = run_gradcheck(seed=3, trials=5), run_gradcheck(seed=3, trials=5)
        assert [r.relative_error for r in a.results] == [r.relative_error for r in b.results]

    def test_empty_layer_dims(self):
        with pytest.raises(ConfigError):
            run_gradcheck(trials=1, layer_dims=[])

    def test_fixed_architecture(self):
        report = gradcheck_experiment(ExperimentConfig(trials=3, layer_dims=(5, 4, 3)))
        assert report.passed


class TestScaling:
    def test_slope_of_exact_power_law(self):
        alphas = np.array([0.02, 0.05, 0.1, 0.2, 0.3])
        assert log_log_slope(alphas, 3.0 / alphas - 1) == pytest.approx(1.0, abs=1e-12)

    def test_fixed_predictor_grows_as_alpha_shrinks(self):
        losses = fixed_predictor_losses(np.arange(100) % 10, 10, [0.02, 0.1, 0.3], seed=0)
        assert losses[0] > losses[1] > losses[2] > 0


def _small(tmp_path, **kw):
    base = dict(out_dir=str(tmp_path), synthetic=True, epochs=2, blob_dim=8, blob_train_per_class=20,
                blob_test_per_class=5, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


class TestSmallRuns:
    def test_exp3_schema(self, tmp_path):
        report = run_exp3(_small(tmp_path, classes=(3, 4), hidden=(8,), penultimate_dim=(4,)))
        rows = _rows(report.csv_paths["classes"])
        assert sorted((r["loss"], int(r["n_classes"])) for r in rows) == [
            ("ce", 3), ("ce", 4), ("chi2", 3), ("chi2", 4)]
        assert [r["n_classes"] for r in _rows(report.csv_paths["gap"])] == ["3", "4"]
        assert (tmp_path / "checkpoints" / "exp3_chi2_n3.ckpt").exists()
        # epoch 0 plus two training epochs per run
        assert len(report.history) == 4 * 3

    def test_exp1_synthetic(self, tmp_path):
        report = run_exp1(_small(tmp_path, penultimate_dim=(2, 3), hidden=(8,)))
        assert {(r["loss"], r["penultimate_dim"]) for r in report.results} == {
            ("chi2", 2), ("chi2", 3), ("ce", 2), ("ce", 3)}
        pen = _rows(tmp_path / "exp1_chi2_d3_penultimate.csv")
        assert list(pen[0]) == ["index", "label", "x0", "x1", "x2"] and len(pen) == 50
        assert "chi2_d2_near_half" in report.checks

    def test_exp2_single_loss(self, tmp_path):
        report = run_exp2(_small(tmp_path, alphas=(0.1, 0.3), penultimate_dim=(4,), hidden=(8,)))
        rows = _rows(report.csv_paths["alpha"])
        assert [float(r["alpha"]) for r in rows] == [0.1, 0.3]
        assert all(float(r["test_loss"]) >= 0 for r in rows)

    def test_couple_lr(self, tmp_path):
        report = run_exp2(_small(tmp_path, alphas=(0.05, 0.2), hidden=(8,), epochs=1, couple_lr=True, lr=0.01))
        assert [r["lr"] for r in report.results] == pytest.approx([0.005, 0.02])


class TestCsv:
    def test_full_precision_floats(self, tmp_path):
        x = 0.1 + 0.2
        path = write_csv(tmp_path / "a.csv", ["x", "n"], [[x, np.int64(3)]])
        assert open(path).read() == "x,n\n0.30000000000000004,3\n"


class TestConfig:
    def test_file_parsing(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\nseed = 4\npenultimate-dim = 2, 8\nsynthetic = yes  # trailing\n\nloss=both\n")
        assert read_config_file(cfg) == {"seed": 4, "penultimate_dim": (2, 8), "synthetic": True, "loss": None}

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 4\nepochs = 7\n")
        args = build_parser().parse_args(["exp3", "--config", str(cfg), "--seed", "9"])
        resolved = resolve_config(args)
        assert resolved.seed == 9 and resolved.epochs == 7

    @pytest.mark.parametrize("text", ["bogus = 1\n", "seed 4\n", "seed = x\n", "synthetic = maybe\n"])
    def test_bad_file(self, tmp_path, text):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(text)
        with pytest.raises(ConfigError):
            read_config_file(cfg)

    def test_converters_cover_every_field(self):
        assert set(CONVERTERS) == set(ExperimentConfig.__dataclass_fields__)

    @pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alphas=(0.1, 1.0)), dict(loss="mse"), dict(lr=0.0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)


class TestCliExitCodes:
    def test_surface_ok(self, tmp_path, capsys):
        assert main(["surface", "--out-dir", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "[PASS] chi2_gradient_region_smaller" in out

    def test_gradcheck_ok(self, capsys):
        assert main(["gradcheck", "--trials", "3"]) == 0

    def test_empty_layer_dims_is_config_error(self):
        assert main(["gradcheck", "--layer-dims", "", "--trials", "1"]) == 2

    def test_bad_alpha_is_config_error(self, tmp_path):
        assert main(["surface", "--alpha", "1.5", "--out-dir", str(tmp_path)]) == 2

    def test_missing_data_is_io_error(self, tmp_path):
        assert main(["exp1", "--data-dir", str(tmp_path / "none"), "--out-dir", str(tmp_path)]) == 3

    def test_failed_check_exit_code(self, tmp_path):
        # an untrained model on one class count cannot satisfy n5_both_above_0.9
        code = main(["exp3", "--classes", "5", "--epochs", "0", "--out-dir", str(tmp_path),
                     "--hidden", "4", "--penultimate-dim", "2"])
        assert code == 1
