import math
import numpy as np

from dataclasses import dataclass
from scipy import sparse

from lpnuq.errors import ConvergenceError, GeometryError, ShapeError
from lpnuq.utils import log

logger = log.setupCustomLogger(__name__)

# ray sampling step in pixel units
RAY_STEP = 1.0


@dataclass(frozen=True)
class ScanGeometry:
    """
    Fan-beam acquisition on a square `image_side` x `image_side` grid with a flat detector.
    Distances are in pixel units. Unset distances default to 2 x image_side and an unset
    detector spacing is chosen so the bins exactly cover the magnified image diagonal.
    """

    image_side: int = 28
    detector_bins: int = 22
    source_to_center: float | None = None
    center_to_detector: float | None = None
    detector_spacing: float | None = None
    candidate_angles: int = 360

    def __post_init__(self):
        if self.image_side < 1 or self.detector_bins < 1:
            raise GeometryError("image_side and detector_bins must be >= 1")
        if self.candidate_angles < 1:
            raise GeometryError("candidate_angles must be >= 1")

        if self.source_to_center is None:
            object.__setattr__(self, "source_to_center", 2.0 * self.image_side)
        if self.center_to_detector is None:
            object.__setattr__(self, "center_to_detector", 2.0 * self.image_side)
        if self.source_to_center <= 0 or self.center_to_detector <= 0:
            raise GeometryError("source and detector distances must be > 0")
        if self.source_to_center <= self.half_diagonal:
            raise GeometryError(
                f"source at {self.source_to_center} lies inside the image circle (radius {self.half_diagonal:.3f})"
            )

        needed = self.coverage_half_width()
        if self.detector_spacing is None:
            object.__setattr__(
                self, "detector_spacing", 2.0 * needed / self.detector_bins
            )
        if self.detector_spacing <= 0:
            raise GeometryError("detector_spacing must be > 0")

        covered = self.detector_bins * self.detector_spacing / 2.0
        if covered < needed * (1.0 - 1e-12):
            raise GeometryError(
                f"detector half-width {covered:.4f} does not cover the fan of the image diagonal ({needed:.4f})"
            )

    @property
    def half_diagonal(self):
        return self.image_side * math.sqrt(2.0) / 2.0

    @property
    def n_pixels(self):
        return self.image_side * self.image_side

    @property
    def magnification(self):
        return (self.source_to_center + self.center_to_detector) / self.source_to_center

    def coverage_half_width(self):
        """Detector half-width needed for the fan tangent to the image circumcircle."""
        D = self.source_to_center
        r = self.half_diagonal
        return (D + self.center_to_detector) * r / math.sqrt(D * D - r * r)

    def bin_offsets(self):
        k = np.arange(self.detector_bins, dtype=np.float64)
        return (k - (self.detector_bins - 1) / 2.0) * self.detector_spacing

    def angle_radians(self, indices):
        return 2.0 * np.pi * np.asarray(indices, dtype=np.float64) / self.candidate_angles


@dataclass(frozen=True)
class AngleSet:
    """Ordered, distinct indices into the candidate angle grid of a ScanGeometry."""

    angles: tuple

    def __post_init__(self):
        values = tuple(int(a) for a in self.angles)
        object.__setattr__(self, "angles", values)
        if len(values) == 0:
            raise GeometryError("an angle set needs at least one view")
        if len(set(values)) != len(values):
            raise GeometryError(f"angle indices must be distinct: {values}")

    @property
    def n_views(self):
        return len(self.angles)

    def validate(self, geometry):
        if self.n_views > geometry.candidate_angles:
            raise GeometryError(
                f"{self.n_views} views requested from {geometry.candidate_angles} candidates"
            )
        for a in self.angles:
            if a < 0 or a >= geometry.candidate_angles:
                raise GeometryError(
                    f"angle index {a} outside [0, {geometry.candidate_angles})"
                )

    @classmethod
    def full(cls, geometry):
        return cls(tuple(range(geometry.candidate_angles)))


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """
    Materialized forward projector A (rows = n_views x detector_bins, cols = image_side^2).
    Row r belongs to view r // detector_bins and bin r % detector_bins.
    """

    matrix: sparse.csr_matrix
    geometry: ScanGeometry
    angles: AngleSet

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    def entries(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data


def _clipToSquare(origin, dirs, half, length):
    """
    Returns entry and exit ray parameters of the square [-half, half]^2 for rays
    origin + t * dirs, limited to t in [0, length].
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        tLow = (-half - origin[None, :]) / dirs
        tHigh = (half - origin[None, :]) / dirs
    tNear = np.minimum(tLow, tHigh)
    tFar = np.maximum(tLow, tHigh)
    # a ray grazing a slab edge along an axis never enters the slab
    tNear = np.where(np.isnan(tNear), np.inf, tNear)
    tFar = np.where(np.isnan(tFar), -np.inf, tFar)

    tIn = np.maximum(np.max(tNear, axis=1), 0.0)
    tOut = np.minimum(np.min(tFar, axis=1), length)
    return tIn, tOut


def _viewTriples(geometry, angleIndex):
    N = geometry.image_side
    D = geometry.source_to_center
    d = geometry.center_to_detector
    beta = float(geometry.angle_radians(angleIndex))

    theta = np.array([math.cos(beta), math.sin(beta)])
    lateral = np.array([-math.sin(beta), math.cos(beta)])
    source = D * theta
    targets = -d * theta[None, :] + geometry.bin_offsets()[:, None] * lateral[None, :]

    dirs = targets - source[None, :]
    length = np.linalg.norm(dirs, axis=1)
    dirs = dirs / length[:, None]

    tIn, tOut = _clipToSquare(source, dirs, N / 2.0, length)
    span = np.maximum(tOut - tIn, 0.0)
    nSteps = np.ceil(span / RAY_STEP).astype(np.int64)
    segment = np.where(nSteps > 0, span / np.maximum(nSteps, 1), 0.0)

    k = np.arange(max(int(nSteps.max()), 1))
    valid = k[None, :] < nSteps[:, None]
    t = tIn[:, None] + (k[None, :] + 0.5) * segment[:, None]

    fj = source[0] + t * dirs[:, 0:1] + (N - 1) / 2.0
    fi = (N - 1) / 2.0 - (source[1] + t * dirs[:, 1:2])
    j0 = np.floor(fj).astype(np.int64)
    i0 = np.floor(fi).astype(np.int64)
    wj = fj - j0
    wi = fi - i0

    rays = np.broadcast_to(np.arange(geometry.detector_bins)[:, None], t.shape)
    seg = np.broadcast_to(segment[:, None], t.shape)

    rows, cols, vals = [], [], []
    for di, dj, w in (
        (0, 0, (1.0 - wi) * (1.0 - wj)),
        (0, 1, (1.0 - wi) * wj),
        (1, 0, wi * (1.0 - wj)),
        (1, 1, wi * wj),
    ):
        ii = i0 + di
        jj = j0 + dj
        keep = valid & (ii >= 0) & (ii < N) & (jj >= 0) & (jj < N) & (w > 0)
        rows.append(rays[keep])
        cols.append((ii * N + jj)[keep])
        vals.append((w * seg)[keep])

    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def build_operator(geometry, angles):
    """
    Builds the Joseph-style ray-driven discretization of the fan-beam line integrals.

    ### Parameters:
    ----------
    #### geometry: ScanGeometry
    The acquisition geometry.

    #### angles: AngleSet
    The views to acquire, in sinogram order.

    ### Returns:
    ----------
    A SparseOperator whose rows are grouped per view in the order of `angles`.
    """
    angles.validate(geometry)
    B = geometry.detector_bins
    n = geometry.n_pixels
    m = angles.n_views * B

    rows, cols, vals = [], [], []
    for v, a in enumerate(angles.angles):
        r, c, w = _viewTriples(geometry, a)
        rows.append(r + v * B)
        cols.append(c)
        vals.append(w)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)

    # sum duplicate (ray, pixel) pairs in input order so construction is bit-reproducible
    keys, inverse = np.unique(rows * n + cols, return_inverse=True)
    weights = np.bincount(inverse, weights=vals, minlength=len(keys))
    keep = weights > 0
    keys = keys[keep]
    weights = weights[keep]
    if not np.all(np.isfinite(weights)):
        raise GeometryError("non-finite projector weight")

    matrix = sparse.csr_matrix((weights, (keys // n, keys % n)), shape=(m, n))
    logger.debug(f"Built operator {m}x{n} with {matrix.nnz} entries")
    return SparseOperator(matrix=matrix, geometry=geometry, angles=angles)


def forward(op, x):
    x = np.asarray(x, dtype=np.float64)
    if x.size != op.cols:
        raise ShapeError(f"image has {x.size} pixels, operator expects {op.cols}")
    return op.matrix @ x.ravel()


def adjoint(op, u):
    u = np.asarray(u, dtype=np.float64)
    if u.size != op.rows:
        raise ShapeError(f"measurement has {u.size} entries, operator expects {op.rows}")
    side = op.geometry.image_side
    return (op.matrix.T @ u.ravel()).reshape(side, side)


def operator_norm_sq(op, maxIters=1000, tol=1e-6, seed=0):
    """
    Estimates ||A||^2, the largest eigenvalue of A^T A, by power iteration.

    Raises ConvergenceError carrying the last estimate when the relative change
    does not drop below `tol` within `maxIters` iterations.
    """
    if op.matrix.nnz == 0:
        raise ShapeError("operator has no entries")

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.cols)
    v /= np.linalg.norm(v)

    estimate = 0.0
    for it in range(maxIters):
        Av = op.matrix @ v
        newEstimate = float(Av @ Av)
        w = op.matrix.T @ Av
        normW = np.linalg.norm(w)
        if normW == 0.0:
            # start vector landed in the null space, restart elsewhere
            v = rng.standard_normal(op.cols)
            v /= np.linalg.norm(v)
            continue
        v = w / normW
        if abs(newEstimate - estimate) <= tol * abs(newEstimate):
            logger.debug(f"Power iteration converged after {it + 1} iterations")
            return newEstimate
        estimate = newEstimate

    raise ConvergenceError(
        f"power iteration did not converge in {maxIters} iterations", estimate
    )
