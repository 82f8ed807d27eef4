import numpy as np

from dataclasses import dataclass, field

from lpnuq.errors import GeometryError, LpnuqError, ReconstructionError, ShapeError
from lpnuq.method_enum import Method, ResampleMode
from lpnuq.reconstruction.solver import SolveConfig, reconstruct
from lpnuq.tomography import geometry as geo
from lpnuq.tomography.fbp import FbpConfig, fbp_reconstruct
from lpnuq.utils import log
from lpnuq.utils.metrics import DEFAULT_METRICS, clamp01, psnr, ssim

logger = log.setupCustomLogger(__name__)

ANGLE_SEED_FACTOR = 10007
NOISE_SEED_FACTOR = 10009


def angleSeed(baseSeed, s):
    return baseSeed * ANGLE_SEED_FACTOR + s


def noiseSeed(baseSeed, s):
    return baseSeed * NOISE_SEED_FACTOR + s


def poolSeeds(baseSeed):
    """Independent (angle, noise) seed sequences of the shared acquisition in fixed-pool mode."""
    angles, noise = np.random.SeedSequence(noiseSeed(baseSeed, 0)).spawn(2)
    return angles, noise


@dataclass(frozen=True)
class Sinogram:
    values: np.ndarray
    angles: geo.AngleSet
    sigma: float
    seed: int | np.random.SeedSequence


@dataclass(frozen=True)
class UqProtocol:
    n_views: int
    n_seeds: int = 10
    sigma: float = 2.0
    base_seed: int = 0
    method: Method = Method.LPN
    solve: SolveConfig = SolveConfig()
    fbp: FbpConfig = FbpConfig()
    resample_mode: ResampleMode = ResampleMode.FRESH_ACQUISITION
    # acquisition size of the shared pool in fixed_pool_subsets mode, None = full grid
    pool_views: int | None = None

    def __post_init__(self):
        if self.n_seeds < 2:
            raise ValueError("n_seeds must be >= 2")
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.pool_views is not None and self.pool_views < self.n_views:
            raise ValueError("pool_views must be >= n_views")


@dataclass
class UncertaintyReport:
    reconstructions: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    score: float
    angle_sets: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    @property
    def n_seeds(self):
        return len(self.reconstructions)


def draw_angle_subset(geometry, nViews, seed):
    """Uniform draw of `nViews` distinct candidate angles, returned in ascending order."""
    if not 1 <= nViews <= geometry.candidate_angles:
        raise GeometryError(
            f"n_views {nViews} outside [1, {geometry.candidate_angles}]"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(geometry.candidate_angles, size=nViews, replace=False)
    return geo.AngleSet(tuple(np.sort(picked)))


def simulate_measurement(op, xTrue, sigma, seed):
    """y = A x_true + sigma * eps with eps standard normal drawn from `seed`."""
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    y = geo.forward(op, xTrue)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        y = y + sigma * rng.standard_normal(op.rows)
    return Sinogram(values=y, angles=op.angles, sigma=sigma, seed=seed)


def acquire(geometry, xTrue, nViews, sigma, baseSeed, s):
    """One seeded acquisition: angle subset, its operator and the noisy sinogram."""
    angles = draw_angle_subset(geometry, nViews, angleSeed(baseSeed, s))
    op = geo.build_operator(geometry, angles)
    return op, simulate_measurement(op, xTrue, sigma, noiseSeed(baseSeed, s))


def _poolSubset(geometry, pool, poolSinogram, nViews, seed):
    rng = np.random.default_rng(seed)
    positions = np.sort(rng.choice(pool.angles.n_views, size=nViews, replace=False))
    angles = geo.AngleSet(tuple(pool.angles.angles[p] for p in positions))
    bins = geometry.detector_bins
    rows = (positions[:, None] * bins + np.arange(bins)[None, :]).ravel()
    op = geo.build_operator(geometry, angles)
    values = poolSinogram.values[rows]
    return op, Sinogram(values, angles, poolSinogram.sigma, poolSinogram.seed)


def reconstruct_with(method, op, y, prox, solveCfg, fbpCfg, normSq=None):
    match method:
        case Method.LPN:
            x, _ = reconstruct(op, y, prox, solveCfg, normSq=normSq, fbpCfg=fbpCfg)
            return x
        case Method.FBP:
            return fbp_reconstruct(op.geometry, op.angles, y, fbpCfg)
        case _:
            raise ValueError(f"Invalid method: {method}")


def summarize(reconstructions):
    """
    Pixel-wise mean and population std over the seed axis plus the scalar score
    (mean of the std image). Pixels that agree bit-for-bit across seeds get std 0.
    """
    recs = np.asarray(reconstructions, dtype=np.float64)
    mean = recs.mean(axis=0)
    std = recs.std(axis=0)
    std[np.all(recs == recs[0], axis=0)] = 0.0
    return mean, std, float(std.mean())


def run_uq(xTrue, geometry, protocol, prior, metricCfg=DEFAULT_METRICS):
    """
    Reconstructs `xTrue` from `protocol.n_seeds` independently resampled acquisitions
    and measures the pixel-wise spread of the reconstructions.

    ### Parameters:
    ----------
    #### xTrue: np.ndarray
    Ground-truth image (image_side x image_side).
    #### geometry: ScanGeometry
    #### protocol: UqProtocol
    #### prior: callable
    Proximal handle used by the solver (ignored for FBP).

    ### Returns:
    ----------
    An UncertaintyReport. Per-seed results are stored first and reduced in seed order.
    """
    xTrue = np.asarray(xTrue, dtype=np.float64)
    if xTrue.size != geometry.n_pixels:
        raise ShapeError(
            f"image has {xTrue.size} pixels, geometry expects {geometry.n_pixels}"
        )
    xTrue = xTrue.reshape(geometry.image_side, geometry.image_side)

    pool = poolSinogram = None
    if protocol.resample_mode == ResampleMode.FIXED_POOL_SUBSETS:
        poolViews = protocol.pool_views or geometry.candidate_angles
        angleStream, noiseStream = poolSeeds(protocol.base_seed)
        poolAngles = draw_angle_subset(geometry, poolViews, angleStream)
        pool = geo.build_operator(geometry, poolAngles)
        poolSinogram = simulate_measurement(pool, xTrue, protocol.sigma, noiseStream)

    reconstructions = [None] * protocol.n_seeds
    angleSets = [None] * protocol.n_seeds
    for s in range(protocol.n_seeds):
        try:
            if pool is None:
                op, sino = acquire(
                    geometry,
                    xTrue,
                    protocol.n_views,
                    protocol.sigma,
                    protocol.base_seed,
                    s,
                )
            else:
                op, sino = _poolSubset(
                    geometry,
                    pool,
                    poolSinogram,
                    protocol.n_views,
                    angleSeed(protocol.base_seed, s),
                )
            reconstructions[s] = reconstruct_with(
                protocol.method, op, sino.values, prior, protocol.solve, protocol.fbp
            )
            angleSets[s] = op.angles
        except LpnuqError as e:
            raise ReconstructionError(
                f"seed {s}: {e}", seed=s, trace=getattr(e, "trace", None)
            ) from e

    recs = np.stack(reconstructions)
    mean, std, score = summarize(recs)
    report = UncertaintyReport(
        reconstructions=recs,
        mean=mean,
        std=std,
        score=score,
        angle_sets=angleSets,
        psnr=[psnr(clamp01(r), xTrue, metricCfg) for r in recs],
        ssim=[ssim(clamp01(r), xTrue, metricCfg) for r in recs],
    )
    logger.debug(
        f"UQ ({protocol.method.value}, {protocol.n_views} views): score {score:.6f}"
    )
    return report


def ood_flag(report, threshold):
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return report.score > threshold
