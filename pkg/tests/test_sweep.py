import os
import numpy as np
import pandas as pd
import pytest
import torch

from lpnuq.experiment import sweep
from lpnuq.prior.icnn import PriorModel
from lpnuq.utils import output
from lpnuq.utils.config import ExperimentConfig


def _config(outDir, **overrides):
    values = dict(
        image_side=8,
        detector_bins=12,
        candidate_angles=36,
        view_budgets=(4, 8),
        n_seeds=2,
        eval_per_digit=1,
        solver_max_iters=5,
        output_dir=str(outDir),
    )
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return PriorModel(inputDim=64, hidden=(8,), beta=10.0)


def _readAll(outDir):
    expDir = os.path.join(outDir, "experiment")
    return {
        name: open(os.path.join(expDir, name), "rb").read()
        for name in ("manifest.csv", "summary.csv", "digit_std.csv", "error_correlation.csv")
    }


def test_full_sweep_outputs(tmp_path, eval_set_8, tiny_model):
    cfg = _config(tmp_path)
    result = sweep.runExperiment(cfg, eval_set_8, tiny_model, jobs=1)

    assert result.total_cells == 20
    assert result.new_cells == 20
    assert result.failed == []
    assert result.new_reconstructions == 20 * 2 * 2

    expDir = tmp_path / "experiment"
    summary = output.read_csv(str(expDir / "summary.csv"))
    assert len(summary) == 10 * 2 * 2
    assert set(summary["method"]) == {"lpn", "fbp"}
    assert (summary["n_reconstructions"] == 2).all()
    assert (summary["n_images"] == 1).all()
    assert (summary["psnr_min"] <= summary["psnr_max"]).all()

    manifest = output.readManifest(str(expDir / "manifest.csv"))
    assert len(manifest) == 20
    assert (manifest["status"] == "ok").all()

    cell = output.read_csv(str(expDir / "cells" / "d3_i0_v4.csv"))
    assert list(cell.columns) == sweep.CELL_COLUMNS
    assert len(cell) == 4
    std = output.read_csv(str(expDir / "cells" / "d3_i0_v4_fbp_std.csv"))["value"]
    fbpScore = cell.loc[cell["method"] == "fbp", "score"].iloc[0]
    assert fbpScore == pytest.approx(float(std.mean()), abs=1e-12)

    grid = output.readPgm16(str(expDir / "grids" / "std_v8_lpn.pgm"))
    assert grid.shape == (8, 80)


def test_rerun_skips_completed_cells(tmp_path, eval_set_8, tiny_model):
    cfg = _config(tmp_path)
    sweep.runExperiment(cfg, eval_set_8, tiny_model, jobs=1)
    first = _readAll(tmp_path)

    again = sweep.runExperiment(cfg, eval_set_8, tiny_model, jobs=1)
    assert again.new_cells == 0
    assert again.new_reconstructions == 0
    assert _readAll(tmp_path) == first


def test_sweep_is_reproducible(tmp_path, eval_set_8, tiny_model):
    a = tmp_path / "a"
    b = tmp_path / "b"
    sweep.runExperiment(_config(a), eval_set_8, tiny_model, jobs=1)
    sweep.runExperiment(_config(b), eval_set_8, tiny_model, jobs=1)
    assert _readAll(a) == _readAll(b)


def test_two_jobs_match_one_job(tmp_path, eval_set_8, tiny_model):
    serial = tmp_path / "serial"
    pooled = tmp_path / "pooled"
    sweep.runExperiment(_config(serial), eval_set_8, tiny_model, jobs=1)
    result = sweep.runExperiment(_config(pooled), eval_set_8, tiny_model, jobs=2)
    assert result.new_cells == 20
    assert _readAll(serial) == _readAll(pooled)


def test_rerun_with_other_base_seed_recomputes(tmp_path, eval_set_8, tiny_model):
    shared = tmp_path / "shared"
    fresh = tmp_path / "fresh"
    sweep.runExperiment(_config(shared), eval_set_8, tiny_model, jobs=1)

    again = sweep.runExperiment(_config(shared, base_seed=5), eval_set_8, tiny_model, jobs=1)
    assert again.new_cells == 20
    assert again.new_reconstructions == 20 * 2 * 2

    sweep.runExperiment(_config(fresh, base_seed=5), eval_set_8, tiny_model, jobs=1)
    assert _readAll(shared) == _readAll(fresh)


def test_rerun_with_other_prior_recomputes(tmp_path, eval_set_8, tiny_model):
    cfg = _config(tmp_path, view_budgets=(4,))
    sweep.runExperiment(cfg, eval_set_8, tiny_model, jobs=1)
    torch.manual_seed(1)
    other = PriorModel(inputDim=64, hidden=(8,), beta=10.0)
    again = sweep.runExperiment(cfg, eval_set_8, other, jobs=1)
    assert again.new_cells == 10


def test_run_fingerprint(tmp_path, eval_set_8, tiny_model):
    base = sweep.runFingerprint(_config(tmp_path), eval_set_8, tiny_model)
    assert base.startswith("sha256:")
    assert sweep.runFingerprint(_config(tmp_path / "elsewhere"), eval_set_8, tiny_model) == base
    assert sweep.runFingerprint(_config(tmp_path, view_budgets=(4,)), eval_set_8, tiny_model) == base
    assert sweep.runFingerprint(_config(tmp_path, base_seed=5), eval_set_8, tiny_model) != base
    assert sweep.runFingerprint(_config(tmp_path, noise_sigma=1.0), eval_set_8, tiny_model) != base
    assert sweep.runFingerprint(_config(tmp_path), eval_set_8, None) != base
    with torch.no_grad():
        next(tiny_model.parameters()).add_(1.0)
    assert sweep.runFingerprint(_config(tmp_path), eval_set_8, tiny_model) != base


def test_threshold_adds_flagged_fraction(tmp_path, eval_set_8, tiny_model):
    cfg = _config(tmp_path, view_budgets=(4,))
    sweep.runExperiment(cfg, eval_set_8, tiny_model, jobs=1, threshold=0.0)
    scores = output.read_csv(str(tmp_path / "experiment" / "digit_std.csv"))
    assert len(scores) == 20
    assert "flagged_fraction" in scores.columns
    assert scores["flagged_fraction"].between(0.0, 1.0).all()


def test_missing_images_are_recorded_as_failures(tmp_path, eval_set_8, tiny_model):
    cfg = _config(tmp_path, view_budgets=(4,), eval_per_digit=2)
    result = sweep.runExperiment(cfg, eval_set_8, tiny_model, jobs=1)

    assert result.total_cells == 20
    assert len(result.failed) == 10
    assert all(index == 1 for _, index, _ in result.failed)

    manifest = output.readManifest(str(tmp_path / "experiment" / "manifest.csv"))
    failed = manifest[manifest["status"] == "failed"]
    assert len(failed) == 10
    assert (failed["index"] == 1).all()

    summary = output.read_csv(str(tmp_path / "experiment" / "summary.csv"))
    assert len(summary) == 20


def _syntheticCells():
    rows = []
    for digit, index, score, mse in [
        (0, 0, 0.01, 0.001),
        (0, 1, 0.02, 0.002),
        (1, 0, 0.03, 0.004),
        (1, 1, 0.05, 0.003),
    ]:
        for seed in range(2):
            rows.append([digit, index, 11, "lpn", seed, 20.0 + seed, 0.5, mse, score])
    return pd.DataFrame(rows, columns=sweep.CELL_COLUMNS)


def test_digit_scores():
    scores = sweep.digitScores(_syntheticCells(), threshold=0.025)
    assert list(scores["digit"]) == [0, 1]
    assert list(scores["n_images"]) == [2, 2]
    np.testing.assert_allclose(scores["mean_score"], [0.015, 0.04])
    assert list(scores["flagged_fraction"]) == [0.0, 1.0]


def test_summary_aggregations():
    summary = sweep.summarizeCells(_syntheticCells())
    assert list(summary["n_reconstructions"]) == [4, 4]
    np.testing.assert_allclose(summary["psnr_mean"], [20.5, 20.5])
    np.testing.assert_allclose(summary["psnr_image_std"], [0.0, 0.0])


def test_error_correlation():
    corr = sweep.errorCorrelation(_syntheticCells())
    assert len(corr) == 1
    assert corr["n_images"].iloc[0] == 4
    assert 0.0 < corr["pearson_r"].iloc[0] <= 1.0
    assert corr["spearman_r"].iloc[0] == pytest.approx(0.8)


def test_error_correlation_needs_three_images():
    frame = _syntheticCells()
    corr = sweep.errorCorrelation(frame[frame["digit"] == 0])
    assert np.isnan(corr["pearson_r"].iloc[0])
    assert np.isnan(corr["spearman_r"].iloc[0])
