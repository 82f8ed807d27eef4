import os
import multiprocessing as mp

from dataclasses import dataclass, replace
from dotenv import dotenv_values

from lpnuq.errors import ConfigError
from lpnuq.method_enum import InitMode, OptimizerType, ResampleMode
from lpnuq.prior.trainer import ProxMatchConfig
from lpnuq.reconstruction.solver import SolveConfig
from lpnuq.reconstruction.uq import UqProtocol
from lpnuq.tomography.fbp import FbpConfig
from lpnuq.tomography.geometry import ScanGeometry

DATA_DIR_ENV = "LPNUQ_DATA_DIR"

CPU_THREADS = os.getenv("CPU_THREADS")
if CPU_THREADS is not None and CPU_THREADS.isdigit() and int(CPU_THREADS) > 0:
    CPU_THREADS = int(CPU_THREADS)
else:
    CPU_THREADS = mp.cpu_count()


def _intList(value):
    return tuple(int(v) for v in value.split(",") if v.strip())


def _bool(value):
    match value.strip().lower():
        case "true" | "1" | "yes":
            return True
        case "false" | "0" | "no":
            return False
        case _:
            raise ValueError(f"not a boolean: {value}")


def _optionalFloat(value):
    return float(value) if value.strip() else None


# key -> (attribute, parser); defaults live on ExperimentConfig
KEYS = {
    "IMAGE_SIDE": ("image_side", int),
    "DETECTOR_BINS": ("detector_bins", int),
    "SOURCE_TO_CENTER": ("source_to_center", _optionalFloat),
    "CENTER_TO_DETECTOR": ("center_to_detector", _optionalFloat),
    "DETECTOR_SPACING": ("detector_spacing", _optionalFloat),
    "CANDIDATE_ANGLES": ("candidate_angles", int),
    "VIEW_BUDGETS": ("view_budgets", _intList),
    "N_SEEDS": ("n_seeds", int),
    "NOISE_SIGMA": ("noise_sigma", float),
    "BASE_SEED": ("base_seed", int),
    "RESAMPLE_MODE": ("resample_mode", ResampleMode),
    "POOL_VIEWS": ("pool_views", int),
    "TRAIN_DIGIT": ("train_digit", int),
    "EVAL_PER_DIGIT": ("eval_per_digit", int),
    "SPLIT_SEED": ("split_seed", int),
    "SOLVER_MAX_ITERS": ("solver_max_iters", int),
    "SOLVER_STEP_SCALE": ("solver_step_scale", float),
    "SOLVER_TOL": ("solver_tol", float),
    "SOLVER_INIT": ("solver_init", InitMode),
    "SOLVER_CLAMP": ("solver_clamp", _bool),
    "FBP_CUTOFF": ("fbp_cutoff", float),
    "FBP_FAN_WEIGHTING": ("fbp_fan_weighting", _bool),
    "PRIOR_HIDDEN": ("prior_hidden", _intList),
    "PRIOR_BETA": ("prior_beta", float),
    "PRIOR_ALPHA": ("prior_alpha", float),
    "TRAIN_EPOCHS": ("train_epochs", int),
    "TRAIN_PRETRAIN_EPOCHS": ("train_pretrain_epochs", int),
    "TRAIN_EPOCHS_PER_GAMMA": ("train_epochs_per_gamma", int),
    "TRAIN_BATCH_SIZE": ("train_batch_size", int),
    "TRAIN_LR": ("train_lr", float),
    "TRAIN_MOMENTUM": ("train_momentum", float),
    "TRAIN_OPTIMIZER": ("train_optimizer", OptimizerType),
    "TRAIN_SIGMA": ("train_sigma", float),
    "TRAIN_GAMMA_INIT": ("train_gamma_init", float),
    "TRAIN_GAMMA_MIN": ("train_gamma_min", float),
    "TRAIN_GAMMA_DECAY": ("train_gamma_decay", float),
    "TRAIN_SEED": ("train_seed", int),
    "TRAIN_LIMIT": ("train_limit", int),
    "DATA_DIR": ("data_dir", str),
    "OUTPUT_DIR": ("output_dir", str),
    "CHECKPOINT_PATH": ("checkpoint_path", str),
}


@dataclass(frozen=True)
class ExperimentConfig:
    image_side: int = 28
    detector_bins: int = 22
    source_to_center: float | None = None
    center_to_detector: float | None = None
    detector_spacing: float | None = None
    candidate_angles: int = 360
    view_budgets: tuple = (11, 22, 33)
    n_seeds: int = 10
    noise_sigma: float = 2.0
    base_seed: int = 0
    resample_mode: ResampleMode = ResampleMode.FRESH_ACQUISITION
    pool_views: int = 0
    train_digit: int = 0
    eval_per_digit: int = 10
    split_seed: int = 0
    solver_max_iters: int = 200
    solver_step_scale: float = 1.0
    solver_tol: float = 1e-4
    solver_init: InitMode = InitMode.FBP
    solver_clamp: bool = True
    fbp_cutoff: float = 1.0
    fbp_fan_weighting: bool = True
    prior_hidden: tuple = (128, 128)
    prior_beta: float = 100.0
    prior_alpha: float = 1e-2
    train_epochs: int = 20
    train_pretrain_epochs: int = 5
    train_epochs_per_gamma: int = 1
    train_batch_size: int = 64
    train_lr: float = 1e-3
    train_momentum: float = 0.9
    train_optimizer: OptimizerType = OptimizerType.SGD
    train_sigma: float = 0.1
    train_gamma_init: float = 0.5
    train_gamma_min: float = 0.03
    train_gamma_decay: float = 0.8
    train_seed: int = 0
    train_limit: int = 0
    data_dir: str = "data"
    output_dir: str = "output"
    checkpoint_path: str = "output/prior.lpn"

    def __post_init__(self):
        if len(self.view_budgets) == 0:
            raise ConfigError("VIEW_BUDGETS must name at least one budget")

    def geometry(self):
        return ScanGeometry(
            image_side=self.image_side,
            detector_bins=self.detector_bins,
            source_to_center=self.source_to_center,
            center_to_detector=self.center_to_detector,
            detector_spacing=self.detector_spacing,
            candidate_angles=self.candidate_angles,
        )

    def solve_config(self):
        return SolveConfig(
            max_iters=self.solver_max_iters,
            step_scale=self.solver_step_scale,
            tol=self.solver_tol,
            init=self.solver_init,
            clamp_iterates=self.solver_clamp,
        )

    def fbp_config(self):
        return FbpConfig(cutoff=self.fbp_cutoff, apply_fan_weighting=self.fbp_fan_weighting)

    def train_config(self):
        return ProxMatchConfig(
            gamma_init=self.train_gamma_init,
            gamma_min=self.train_gamma_min,
            gamma_decay=self.train_gamma_decay,
            epochs_per_gamma=self.train_epochs_per_gamma,
            sigma=self.train_sigma,
            epochs=self.train_epochs,
            pretrain_epochs=self.train_pretrain_epochs,
            batch_size=self.train_batch_size,
            lr=self.train_lr,
            momentum=self.train_momentum,
            optimizer=self.train_optimizer,
            seed=self.train_seed,
            hidden=self.prior_hidden,
            beta=self.prior_beta,
            alpha=self.prior_alpha,
        )

    def uq_protocol(self, nViews, method):
        return UqProtocol(
            n_views=nViews,
            n_seeds=self.n_seeds,
            sigma=self.noise_sigma,
            base_seed=self.base_seed,
            method=method,
            solve=self.solve_config(),
            fbp=self.fbp_config(),
            resample_mode=self.resample_mode,
            pool_views=self.pool_views or None,
        )

    def with_overrides(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def loadConfig(path=None, **overrides):
    """
    Reads a flat KEY=value config file into an ExperimentConfig.

    ### Parameters:
    ----------
    #### path: str, optional
    Config file; defaults are used for every key it does not set.

    #### overrides:
    Attribute values (e.g. from CLI flags) that take precedence over the file.

    ### Returns:
    ----------
    The validated ExperimentConfig. The LPNUQ_DATA_DIR environment variable replaces DATA_DIR.
    """
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        for key, raw in dotenv_values(path).items():
            if key not in KEYS:
                raise ConfigError(f"{path}: unknown key {key}")
            attribute, parser = KEYS[key]
            try:
                values[attribute] = parser(raw if raw is not None else "")
            except ValueError as e:
                raise ConfigError(f"{path}: invalid value for {key}: {raw!r} ({e})") from e

    if os.getenv(DATA_DIR_ENV):
        values["data_dir"] = os.getenv(DATA_DIR_ENV)

    try:
        return ExperimentConfig(**values).with_overrides(**overrides)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
