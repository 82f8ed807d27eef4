import math
import numpy as np

from dataclasses import dataclass

from lpnuq.errors import ShapeError
from lpnuq.utils import log

logger = log.setupCustomLogger(__name__)


@dataclass(frozen=True)
class FbpConfig:
    cutoff: float = 1.0
    apply_fan_weighting: bool = True

    def __post_init__(self):
        if not 0.0 < self.cutoff <= 1.0:
            raise ValueError(f"FBP cutoff must be in (0, 1], got {self.cutoff}")


def _paddedLength(bins):
    return 1 << int(math.ceil(math.log2(max(2 * bins, 2))))


def rampResponse(bins, spacing, cutoff=1.0):
    """
    Frequency response of the band-limited Ram-Lak filter on a zero-padded grid.
    Built from the spatial kernel h(0) = 1/(4 ds^2), h(k odd) = -1/(pi k ds)^2, which
    keeps the DC response near zero instead of sampling |f| directly.
    """
    P = _paddedLength(bins)
    k = np.fft.fftfreq(P, d=1.0 / P)
    h = np.zeros(P)
    h[0] = 1.0 / (4.0 * spacing**2)
    odd = (np.abs(k) % 2) == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    response = spacing * np.real(np.fft.fft(h))

    freqs = np.fft.fftfreq(P)
    response[np.abs(freqs) > cutoff * 0.5] = 0.0
    return response


def filterProjections(views, spacing, cutoff=1.0):
    """Ramp-filters each row of `views` (n_views x bins) with zero padding."""
    nViews, bins = views.shape
    response = rampResponse(bins, spacing, cutoff)
    padded = np.zeros((nViews, len(response)))
    padded[:, :bins] = views
    filtered = np.fft.ifft(np.fft.fft(padded, axis=1) * response[None, :], axis=1)
    return np.real(filtered[:, :bins])


def fbp_reconstruct(geometry, angles, y, cfg=None):
    """
    Fan-beam filtered back-projection for a flat detector.

    The projections are rescaled to a virtual detector through the isocenter,
    cosine weighted, ramp filtered, and back-projected with the inverse squared
    source-distance weight. The sum over views is scaled by pi / n_views. The
    result is not clamped.

    ### Parameters:
    ----------
    #### geometry: ScanGeometry
    #### angles: AngleSet
    #### y: np.ndarray
    Sinogram with n_views x detector_bins entries, view-major.
    #### cfg: FbpConfig

    ### Returns:
    ----------
    The reconstructed image (image_side x image_side).
    """
    cfg = cfg or FbpConfig()
    y = np.asarray(y, dtype=np.float64)
    nViews = angles.n_views
    bins = geometry.detector_bins
    if nViews == 0:
        raise ShapeError("FBP needs at least one view")
    if y.size != nViews * bins:
        raise ShapeError(
            f"sinogram has {y.size} entries, expected {nViews} x {bins}"
        )

    D = geometry.source_to_center
    isoScale = 1.0 / geometry.magnification
    s = geometry.bin_offsets() * isoScale
    ds = geometry.detector_spacing * isoScale

    views = y.reshape(nViews, bins)
    if cfg.apply_fan_weighting:
        views = views * (D / np.sqrt(D * D + s * s))[None, :]
    filtered = filterProjections(views, ds, cfg.cutoff)

    N = geometry.image_side
    coords = np.arange(N, dtype=np.float64) - (N - 1) / 2.0
    px = coords[None, :]
    py = -coords[:, None]

    image = np.zeros((N, N))
    for row, beta in zip(filtered, geometry.angle_radians(angles.angles)):
        c, sn = math.cos(beta), math.sin(beta)
        along = px * c + py * sn
        lateral = -px * sn + py * c
        distance = D - along
        sPix = D * lateral / distance
        values = np.interp(sPix, s, row, left=0.0, right=0.0)
        if cfg.apply_fan_weighting:
            values = values * (D / distance) ** 2
        image += values

    return image * (np.pi / nViews)
