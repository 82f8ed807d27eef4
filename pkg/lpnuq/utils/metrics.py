import math
import numpy as np

from dataclasses import dataclass
from scipy import ndimage
from skimage.metrics import mean_squared_error
from skimage.util import crop

from lpnuq.errors import ShapeError


@dataclass(frozen=True)
class MetricConfig:
    data_range: float = 1.0
    window_size: int = 7
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.data_range <= 0:
            raise ValueError("data_range must be > 0")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("SSIM window size must be odd")


DEFAULT_METRICS = MetricConfig()


def clamp01(x):
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


def _checkShapes(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, cfg=DEFAULT_METRICS):
    """PSNR in dB; identical images give +inf."""
    x, ref = _checkShapes(x, ref)
    mse = mean_squared_error(ref, x)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(cfg.data_range**2 / mse)


def _gaussianWindow(size, sigma):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(x, ref, cfg=DEFAULT_METRICS):
    """
    Mean structural similarity with a normalized Gaussian window of `cfg.window_size`
    taps and population (biased) local statistics. Border pixels within half a window
    are cropped before averaging.
    """
    x, ref = _checkShapes(x, ref)
    if min(x.shape) < cfg.window_size:
        raise ShapeError(
            f"image {x.shape} is smaller than the {cfg.window_size}x{cfg.window_size} SSIM window"
        )

    window = _gaussianWindow(cfg.window_size, cfg.window_sigma)

    def local(a):
        return ndimage.correlate(a, window, mode="reflect")

    ux = local(x)
    uy = local(ref)
    uxx = local(x * x)
    uyy = local(ref * ref)
    uxy = local(x * ref)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy

    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    a1 = 2 * ux * uy + c1
    a2 = 2 * vxy + c2
    b1 = ux**2 + uy**2 + c1
    b2 = vx + vy + c2
    ssimMap = (a1 * a2) / (b1 * b2)

    pad = (cfg.window_size - 1) // 2
    return float(crop(ssimMap, pad).mean(dtype=np.float64))
