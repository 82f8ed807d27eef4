import argparse
import os
import sys
import pandas as pd

from multiprocessing import set_start_method

from lpnuq.errors import CheckpointError, ConfigError, LpnuqError
from lpnuq.experiment.sweep import runExperiment
from lpnuq.method_enum import Method
from lpnuq.prior.checkpoint import load_model, save_model
from lpnuq.prior.icnn import LearnedProx
from lpnuq.prior.trainer import train
from lpnuq.reconstruction.uq import acquire, ood_flag, reconstruct_with, run_uq
from lpnuq.utils import data as dataUtils
from lpnuq.utils import log
from lpnuq.utils import output
from lpnuq.utils.config import CPU_THREADS, loadConfig
from lpnuq.utils.metrics import clamp01, psnr, ssim

logger = log.setupCustomLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _loadSplits(cfg):
    train, test = dataUtils.read_mnist(cfg.data_dir)
    return dataUtils.make_splits(
        train, test, cfg.train_digit, cfg.eval_per_digit, cfg.split_seed
    )


def _loadPrior(cfg):
    if not os.path.exists(cfg.checkpoint_path):
        raise CheckpointError(
            f"checkpoint {cfg.checkpoint_path} not found, run `lpnuq train` first"
        )
    model = load_model(cfg.checkpoint_path)
    nPixels = cfg.geometry().n_pixels
    if model.input_dim != nPixels:
        raise CheckpointError(
            f"checkpoint expects {model.input_dim} pixels, geometry has {nPixels}"
        )
    return model


def cmd_train(cfg):
    trainSet, _ = _loadSplits(cfg)
    images = trainSet.images
    if cfg.train_limit > 0:
        images = images[: cfg.train_limit]

    model, trainLog = train(images, cfg.train_config())
    save_model(model, cfg.checkpoint_path)
    output.write_csv(
        os.path.join(cfg.output_dir, "train_log.csv"), trainLog, "train_log"
    )
    return EXIT_OK


def cmd_reconstruct(cfg, digit, index, nViews, seed, method):
    _, evalSet = _loadSplits(cfg)
    xTrue = dataUtils.evalImage(evalSet, digit, index)
    prox = LearnedProx(_loadPrior(cfg)) if method == Method.LPN else None

    op, sino = acquire(
        cfg.geometry(), xTrue, nViews, cfg.noise_sigma, cfg.base_seed, seed
    )
    x = clamp01(
        reconstruct_with(
            method, op, sino.values, prox, cfg.solve_config(), cfg.fbp_config()
        )
    )
    row = [digit, index, nViews, seed, method.value, psnr(x, xTrue), ssim(x, xTrue)]

    stem = os.path.join(
        cfg.output_dir,
        "reconstruct",
        f"d{digit}_i{index}_v{nViews}_s{seed}_{method.value}",
    )
    output.write_pgm16(f"{stem}.pgm", x)
    output.write_csv(
        f"{stem}.csv",
        pd.DataFrame(
            [row],
            columns=["digit", "index", "n_views", "seed", "method", "psnr", "ssim"],
        ),
        "reconstruction",
    )
    logger.info(
        f"Reconstructed digit {digit} image {index} ({nViews} views, seed {seed}, {method.value}): PSNR {row[5]:.2f} dB, SSIM {row[6]:.4f}"
    )
    return EXIT_OK


def cmd_uq(cfg, digit, index, nViews, method, threshold=None):
    _, evalSet = _loadSplits(cfg)
    xTrue = dataUtils.evalImage(evalSet, digit, index)
    prox = LearnedProx(_loadPrior(cfg)) if method == Method.LPN else None

    report = run_uq(xTrue, cfg.geometry(), cfg.uq_protocol(nViews, method), prox)

    directory = os.path.join(cfg.output_dir, "uq", f"d{digit}_i{index}_v{nViews}")
    output.write_pgm16(os.path.join(directory, "mean.pgm"), report.mean)
    output.writeImageValues(os.path.join(directory, "mean.csv"), report.mean)
    output.write_pgm16(
        os.path.join(directory, "std.pgm"), report.std, scale=output.STD_PGM_SCALE
    )
    output.writeImageValues(os.path.join(directory, "std.csv"), report.std)
    for s, rec in enumerate(report.reconstructions):
        output.write_pgm16(os.path.join(directory, f"seed_{s}.pgm"), rec)

    summary = {
        "digit": [digit],
        "index": [index],
        "n_views": [nViews],
        "method": [method.value],
        "score": [report.score],
    }
    if threshold is not None:
        summary["flagged"] = [ood_flag(report, threshold)]
    output.write_csv(
        os.path.join(directory, "summary.csv"), pd.DataFrame(summary), "uq_summary"
    )
    logger.info(
        f"UQ digit {digit} image {index} ({nViews} views, {method.value}): score {report.score:.6f}"
    )
    return EXIT_OK


def cmd_experiment(cfg, jobs, threshold=None):
    _, evalSet = _loadSplits(cfg)
    model = _loadPrior(cfg)
    result = runExperiment(cfg, evalSet, model, jobs=jobs, threshold=threshold)
    return EXIT_PARTIAL if result.failed else EXIT_OK


def _buildParser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c", "--config", help="flat KEY=value config file (see config.env-example)"
    )
    common.add_argument(
        "--base-seed", type=int, help="base seed of the angle and noise draws"
    )

    selection = argparse.ArgumentParser(add_help=False)
    selection.add_argument("-d", "--digit", type=int, default=0, help="digit 0-9")
    selection.add_argument(
        "-i", "--index", type=int, default=0, help="evaluation image index of the digit"
    )
    selection.add_argument(
        "-v", "--n-views", type=int, help="number of views (default: first budget)"
    )
    selection.add_argument(
        "-m",
        "--method",
        choices=[m.value for m in Method],
        default=Method.LPN.value,
        help="reconstruction method",
    )

    parser = ArgumentParser(prog="lpnuq")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("train", parents=[common], help="train the learned prior")

    reconstruct = commands.add_parser(
        "reconstruct", parents=[common, selection], help="reconstruct one acquisition"
    )
    reconstruct.add_argument(
        "-s", "--seed", type=int, default=0, help="seed index of the acquisition"
    )

    uq = commands.add_parser(
        "uq", parents=[common, selection], help="uncertainty report for one image"
    )
    uq.add_argument("-t", "--threshold", type=float, help="OOD score threshold")

    experiment = commands.add_parser(
        "experiment", parents=[common], help="run the full evaluation sweep"
    )
    experiment.add_argument(
        "-v", "--n-views", type=int, help="run a single budget instead of VIEW_BUDGETS"
    )
    experiment.add_argument(
        "-j", "--jobs", type=int, default=CPU_THREADS, help="worker processes"
    )
    experiment.add_argument("-t", "--threshold", type=float, help="OOD score threshold")

    return parser


def main(argv=None):
    parser = _buildParser()
    args = parser.parse_args(argv)

    if getattr(args, "digit", 0) not in range(10):
        parser.error("Invalid digit. Please use a digit between 0 and 9.")
    if getattr(args, "jobs", 1) < 1:
        parser.error("Invalid number of jobs.")
    if getattr(args, "threshold", None) is not None and args.threshold < 0:
        parser.error("Invalid threshold. Please use a non-negative value.")

    overrides = {"base_seed": args.base_seed}
    if args.command == "experiment" and args.n_views is not None:
        overrides["view_budgets"] = (args.n_views,)
    try:
        cfg = loadConfig(args.config, **overrides)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        sys.exit(EXIT_USAGE)

    set_start_method("spawn", force=True)

    startTime = pd.Timestamp.now()
    logger.info(f"Started, command: {args.command}")
    try:
        match args.command:
            case "train":
                code = cmd_train(cfg)
            case "reconstruct":
                code = cmd_reconstruct(
                    cfg,
                    args.digit,
                    args.index,
                    args.n_views or cfg.view_budgets[0],
                    args.seed,
                    Method(args.method),
                )
            case "uq":
                code = cmd_uq(
                    cfg,
                    args.digit,
                    args.index,
                    args.n_views or cfg.view_budgets[0],
                    Method(args.method),
                    args.threshold,
                )
            case "experiment":
                code = cmd_experiment(cfg, args.jobs, args.threshold)
    except (LpnuqError, OSError, ValueError, IndexError) as e:
        logger.error(f"{args.command} failed: {e}")
        sys.exit(EXIT_RUNTIME)

    log.logElapsed(logger, "Finished", startTime)
    sys.exit(code)


if __name__ == "__main__":
    main()
