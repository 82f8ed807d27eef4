class LpnuqError(Exception):
    pass


class ConfigError(LpnuqError):
    pass


class GeometryError(LpnuqError, ValueError):
    pass


class ShapeError(LpnuqError, ValueError):
    pass


class IdxFormatError(LpnuqError, ValueError):
    pass


class CheckpointError(LpnuqError):
    pass


class ConvergenceError(LpnuqError):
    """Power iteration did not settle; `estimate` holds the last value reached."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class TrainingError(LpnuqError):
    """Training diverged; `log` holds the per-epoch rows recorded so far."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []


class ReconstructionError(LpnuqError):
    def __init__(self, message, seed=None, trace=None):
        super().__init__(message)
        self.seed = seed
        self.trace = trace
