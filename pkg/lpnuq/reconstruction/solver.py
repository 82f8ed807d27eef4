import numpy as np

from dataclasses import dataclass, field

from lpnuq.errors import ReconstructionError, ShapeError
from lpnuq.method_enum import InitMode
from lpnuq.tomography import geometry as geo
from lpnuq.tomography.fbp import fbp_reconstruct
from lpnuq.utils import log

logger = log.setupCustomLogger(__name__)


@dataclass(frozen=True)
class SolveConfig:
    max_iters: int = 200
    step_scale: float = 1.0
    tol: float = 1e-4
    init: InitMode = InitMode.FBP
    clamp_iterates: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if not 0 < self.step_scale < 2:
            raise ValueError("step_scale must be in (0, 2)")


@dataclass
class SolveTrace:
    # data fidelity |A x - y|^2 of every iterate, starting with the initial one
    fidelity: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _fidelity(op, x, y):
    r = geo.forward(op, x) - y
    return float(r @ r)


def reconstruct(op, y, prox, cfg=None, normSq=None, fbpCfg=None):
    """
    Proximal gradient iteration v = x - eta A^T (A x - y), x <- prox(v) with eta = step_scale / |A|^2.

    ### Parameters:
    ----------
    #### op: SparseOperator
    #### y: np.ndarray
    Measurements in the operator's row order.
    #### prox: callable
    Image-to-image proximal handle (learned prior, identity, ...).
    #### cfg: SolveConfig
    #### normSq: float, optional
    Precomputed |A|^2; estimated by power iteration when missing.

    ### Returns:
    ----------
    The final iterate (image_side x image_side) and a SolveTrace.
    """
    cfg = cfg or SolveConfig()
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != op.rows:
        raise ShapeError(f"measurement has {y.size} entries, operator expects {op.rows}")

    if normSq is None:
        normSq = geo.operator_norm_sq(op)
    eta = cfg.step_scale / normSq

    side = op.geometry.image_side
    match cfg.init:
        case InitMode.ZEROS:
            x = np.zeros((side, side))
        case InitMode.FBP:
            x = fbp_reconstruct(op.geometry, op.angles, y, fbpCfg)
        case _:
            raise ValueError(f"Invalid init mode: {cfg.init}")
    if cfg.clamp_iterates:
        x = np.clip(x, 0.0, 1.0)

    trace = SolveTrace()
    trace.fidelity.append(_fidelity(op, x, y))
    for k in range(cfg.max_iters):
        v = x - eta * geo.adjoint(op, geo.forward(op, x) - y)
        xNext = np.asarray(prox(v), dtype=np.float64).reshape(side, side)
        if cfg.clamp_iterates:
            xNext = np.clip(xNext, 0.0, 1.0)
        if not np.all(np.isfinite(xNext)):
            trace.iterations = k + 1
            raise ReconstructionError(f"non-finite iterate at iteration {k + 1}", trace=trace)

        change = np.linalg.norm(xNext - x) / max(np.linalg.norm(x), 1e-12)
        x = xNext
        trace.iterations = k + 1
        trace.fidelity.append(_fidelity(op, x, y))
        if change < cfg.tol:
            trace.converged = True
            break

    logger.debug(
        f"Reconstruction stopped after {trace.iterations} iterations, fidelity {trace.fidelity[-1]:.4g}"
    )
    return x, trace
