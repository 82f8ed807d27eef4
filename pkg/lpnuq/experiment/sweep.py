import os
import math
import hashlib
import numpy as np
import pandas as pd
import torch
import multiprocessing as mp

from dataclasses import asdict, dataclass, field
from scipy import stats
from skimage.metrics import mean_squared_error

from lpnuq.errors import LpnuqError
from lpnuq.method_enum import Method
from lpnuq.prior.icnn import LearnedProx
from lpnuq.reconstruction.uq import run_uq
from lpnuq.utils import log
from lpnuq.utils import output
from lpnuq.utils.data import evalImage
from lpnuq.utils.metrics import clamp01

logger = log.setupCustomLogger(__name__)

DIGITS = tuple(range(10))
METHODS = (Method.LPN, Method.FBP)

CELL_COLUMNS = [
    "digit",
    "index",
    "n_views",
    "method",
    "seed",
    "psnr",
    "ssim",
    "mse",
    "score",
]
GROUP_KEYS = ["digit", "n_views", "method"]

# settings that only locate files or choose which cells run
UNHASHED_FIELDS = ("data_dir", "output_dir", "checkpoint_path", "view_budgets")

# filled by _initWorker in every pool process
_worker = {}


@dataclass
class SweepResult:
    total_cells: int
    reconstructions_per_cell: int
    new_cells: int = 0
    failed: list = field(default_factory=list)

    @property
    def new_reconstructions(self):
        return self.reconstructions_per_cell * self.new_cells


def cellName(digit, index, nViews):
    return f"d{digit}_i{index}_v{nViews}"


def runFingerprint(cfg, evalSet, model):
    """
    Digest of everything the numbers of a cell depend on: the settings, the evaluation
    images and the prior parameters. Cells are only reused under the same fingerprint.
    """
    digest = hashlib.sha256()
    settings = {k: v for k, v in asdict(cfg).items() if k not in UNHASHED_FIELDS}
    digest.update(repr(sorted(settings.items())).encode("utf-8"))
    digest.update(np.ascontiguousarray(evalSet.images, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(evalSet.labels, dtype=np.int64).tobytes())
    if model is not None:
        for _, t in sorted(model.state_dict().items()):
            digest.update(t.detach().cpu().numpy().tobytes())
    return f"sha256:{digest.hexdigest()[:16]}"


def _initWorker(cfg, evalSet, model):
    torch.set_num_threads(1)
    _worker["cfg"] = cfg
    _worker["evalSet"] = evalSet
    _worker["geometry"] = cfg.geometry()
    _worker["prox"] = LearnedProx(model) if model is not None else None


def _runCell(digit, index, nViews, cellsDir):
    cfg = _worker["cfg"]
    name = cellName(digit, index, nViews)
    startTime = pd.Timestamp.now()
    logger.debug(f"START: cell {name}")
    try:
        xTrue = evalImage(_worker["evalSet"], digit, index)
        rows = []
        for method in METHODS:
            report = run_uq(
                xTrue, _worker["geometry"], cfg.uq_protocol(nViews, method), _worker["prox"]
            )
            stem = os.path.join(cellsDir, f"{name}_{method.value}")
            output.writeImageValues(f"{stem}_mean.csv", report.mean)
            output.writeImageValues(f"{stem}_std.csv", report.std)
            for s, rec in enumerate(report.reconstructions):
                rows.append(
                    [
                        digit,
                        index,
                        nViews,
                        method.value,
                        s,
                        report.psnr[s],
                        report.ssim[s],
                        mean_squared_error(xTrue, clamp01(rec)),
                        report.score,
                    ]
                )
        # the per-seed table is written last, its presence marks the cell as complete
        output.write_csv(
            os.path.join(cellsDir, f"{name}.csv"),
            pd.DataFrame(rows, columns=CELL_COLUMNS),
            "cell",
        )
    except (LpnuqError, ValueError, IndexError, OSError) as e:
        logger.error(f"Cell {name} failed: {e}")
        return digit, index, nViews, "failed", str(e)

    log.logElapsed(logger, f"END: cell {name}", startTime)
    return digit, index, nViews, "ok", ""


def summarizeCells(frame):
    """
    Per digit, budget and method: PSNR/SSIM statistics pooled over all (image, seed)
    pairs and over the per-image means.
    """
    pooled = frame.groupby(GROUP_KEYS).agg(
        n_images=("index", "nunique"),
        n_reconstructions=("psnr", "size"),
        psnr_mean=("psnr", "mean"),
        psnr_min=("psnr", "min"),
        psnr_max=("psnr", "max"),
        psnr_std=("psnr", "std"),
        ssim_mean=("ssim", "mean"),
        ssim_min=("ssim", "min"),
        ssim_max=("ssim", "max"),
        ssim_std=("ssim", "std"),
    )
    perImage = (
        frame.groupby(GROUP_KEYS + ["index"])[["psnr", "ssim"]]
        .mean()
        .groupby(GROUP_KEYS)
        .agg(
            psnr_image_min=("psnr", "min"),
            psnr_image_max=("psnr", "max"),
            psnr_image_std=("psnr", "std"),
            ssim_image_min=("ssim", "min"),
            ssim_image_max=("ssim", "max"),
            ssim_image_std=("ssim", "std"),
        )
    )
    return pooled.join(perImage).reset_index()


def _imageScores(frame):
    return (
        frame.groupby(GROUP_KEYS + ["index"])
        .agg(score=("score", "first"), mse=("mse", "mean"))
        .reset_index()
    )


def digitScores(frame, threshold=None):
    """Average uncertainty score per digit, budget and method over the evaluated images."""
    scores = _imageScores(frame)
    grouped = scores.groupby(GROUP_KEYS)
    result = grouped.agg(
        n_images=("index", "size"),
        mean_score=("score", "mean"),
        min_score=("score", "min"),
        max_score=("score", "max"),
    )
    if threshold is not None:
        result["flagged_fraction"] = grouped["score"].apply(
            lambda s: float((s > threshold).mean())
        )
    return result.reset_index()


def _correlation(func, a, b):
    if len(a) < 3 or np.all(a == a[0]) or np.all(b == b[0]):
        return math.nan, math.nan
    statistic, pvalue = func(a, b)
    return float(statistic), float(pvalue)


def errorCorrelation(frame):
    """
    Pearson and Spearman correlation between the per-image uncertainty score and the
    per-image mean reconstruction MSE, for every budget and method.
    """
    scores = _imageScores(frame)
    rows = []
    for (nViews, method), group in scores.groupby(["n_views", "method"]):
        score = group["score"].to_numpy()
        mse = group["mse"].to_numpy()
        pearsonR, pearsonP = _correlation(stats.pearsonr, score, mse)
        spearmanR, spearmanP = _correlation(stats.spearmanr, score, mse)
        rows.append([nViews, method, len(group), pearsonR, pearsonP, spearmanR, spearmanP])
    return pd.DataFrame(
        rows,
        columns=[
            "n_views",
            "method",
            "n_images",
            "pearson_r",
            "pearson_p",
            "spearman_r",
            "spearman_p",
        ],
    )


def _writeGrids(cfg, cellsDir, gridsDir):
    side = cfg.image_side
    for nViews in cfg.view_budgets:
        for method in METHODS:
            for kind, scale in (("mean", 1.0), ("std", output.STD_PGM_SCALE)):
                tiles = []
                for digit in DIGITS:
                    path = os.path.join(
                        cellsDir, f"{cellName(digit, 0, nViews)}_{method.value}_{kind}.csv"
                    )
                    if os.path.exists(path):
                        values = output.read_csv(path)["value"].to_numpy()
                        tiles.append(values.reshape(side, side))
                    else:
                        tiles.append(np.zeros((side, side)))
                output.write_pgm16(
                    os.path.join(gridsDir, f"{kind}_v{nViews}_{method.value}.pgm"),
                    np.hstack(tiles),
                    scale=scale,
                )


def runExperiment(cfg, evalSet, model, jobs=1, threshold=None):
    """
    Runs every (digit, image, budget) cell of the evaluation protocol for both methods,
    then writes the summary tables and image grids from the completed cells on disk.

    ### Parameters:
    ----------
    #### cfg: ExperimentConfig
    #### evalSet: LabeledDataset
    At least `cfg.eval_per_digit` images of every digit.
    #### model: PriorModel
    Trained prior used by the LPN reconstructions.
    #### jobs: int
    Worker processes; cells run inline when 1.
    #### threshold: float, optional
    Score threshold for the flagged fraction in digit_std.csv.

    ### Returns:
    ----------
    A SweepResult. Cells marked ok in the manifest under the same runFingerprint are skipped.
    """
    outDir = os.path.join(cfg.output_dir, "experiment")
    cellsDir = os.path.join(outDir, "cells")
    manifestPath = os.path.join(outDir, "manifest.csv")
    os.makedirs(cellsDir, exist_ok=True)

    cells = [
        (digit, index, nViews)
        for digit in DIGITS
        for index in range(cfg.eval_per_digit)
        for nViews in cfg.view_budgets
    ]
    fingerprint = runFingerprint(cfg, evalSet, model)
    manifest = output.readManifest(manifestPath)
    okRows = manifest[manifest["status"] == "ok"]
    stale = int((okRows["fingerprint"] != fingerprint).sum())
    if stale:
        logger.warning(
            f"{stale} cells in {manifestPath} were computed with other settings, prior or images and will be recomputed"
        )
    done = {
        (int(d), int(i), int(v))
        for d, i, v, f in zip(
            okRows["digit"], okRows["index"], okRows["n_views"], okRows["fingerprint"]
        )
        if f == fingerprint
        and os.path.exists(os.path.join(cellsDir, f"{cellName(d, i, v)}.csv"))
    }
    pending = [cell for cell in cells if cell not in done]
    logger.info(
        f"Sweep: {len(cells)} cells, {len(done & set(cells))} already complete, {len(pending)} to run with {jobs} jobs"
    )

    if jobs <= 1 or len(pending) <= 1:
        _initWorker(cfg, evalSet, model)
        results = [_runCell(*cell, cellsDir) for cell in pending]
    else:
        with mp.Pool(
            processes=jobs, initializer=_initWorker, initargs=(cfg, evalSet, model)
        ) as pool:
            results = pool.starmap(_runCell, [(*cell, cellsDir) for cell in pending])

    rows = [[*cell, "ok", "", fingerprint] for cell in cells if cell in done] + [
        [*r, fingerprint] for r in results
    ]
    output.writeManifest(manifestPath, rows)

    failed = [tuple(r[:3]) for r in results if r[3] != "ok"]
    completed = sorted(cell for cell in cells if cell not in failed)
    result = SweepResult(
        total_cells=len(cells),
        new_cells=len(results) - len(failed),
        failed=failed,
        reconstructions_per_cell=cfg.n_seeds * len(METHODS),
    )

    if completed:
        frame = pd.concat(
            [
                output.read_csv(os.path.join(cellsDir, f"{cellName(*cell)}.csv"))
                for cell in completed
            ],
            ignore_index=True,
        )
        output.write_csv(
            os.path.join(outDir, "summary.csv"), summarizeCells(frame), "summary"
        )
        output.write_csv(
            os.path.join(outDir, "digit_std.csv"),
            digitScores(frame, threshold),
            "digit_std",
        )
        output.write_csv(
            os.path.join(outDir, "error_correlation.csv"),
            errorCorrelation(frame),
            "error_correlation",
        )
        _writeGrids(cfg, cellsDir, os.path.join(outDir, "grids"))

    if failed:
        logger.error(f"{len(failed)} of {len(cells)} cells failed, see {manifestPath}")
    logger.info(
        f"Sweep finished: {result.new_cells} new cells, {result.new_reconstructions} new reconstructions"
    )
    return result
