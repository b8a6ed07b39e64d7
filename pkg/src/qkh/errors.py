"""Exception hierarchy shared by all qkh modules."""


class QKHError(Exception):
    """Base class for every error raised by qkh."""


class InvalidDimensionError(QKHError, ValueError):
    pass


class DimensionMismatchError(QKHError, ValueError):
    pass


class ConfigError(QKHError, ValueError):
    """Invalid configuration; ``path`` points at the offending key."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class RegimeViolationError(QKHError, ValueError):
    pass


class StabilityError(QKHError, RuntimeError):
    pass


class ConvergenceError(StabilityError):
    """Propagation did not converge under step halving."""

    def __init__(self, message: str, report: dict | None = None):
        self.report = report or {}
        super().__init__(message)


class TaylorRemainderError(StabilityError):
    pass


class AccuracyError(QKHError, RuntimeError):
    pass


class TruncationRiskError(QKHError, ValueError):
    """Requested oscillator state does not fit in the Fock truncation."""


class TruncationLeakageError(QKHError, RuntimeError):
    """Population reached the top Fock level during a run."""


class TruncationWarning(UserWarning):
    pass


class DimensionBudgetError(ConfigError):
    pass


class PulseDesignError(QKHError, ValueError):
    pass


class SlowModulationError(QKHError, ValueError):
    pass
