"""Exception hierarchy shared by every tribody module."""


class TribodyError(Exception):
    """Base class for all package errors."""


class SingularState(TribodyError, ArithmeticError):
    """Two bodies are closer than the separation floor."""

    def __init__(self, message, separation=None, time=None):
        super().__init__(message)
        self.separation = separation
        self.time = time


class ZeroTotalMass(TribodyError, ValueError):
    pass


class StepUnderflow(TribodyError, ArithmeticError):
    """Adaptive step shrank below the admissible floor (close encounter)."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NotConverged(TribodyError):
    """Two-tolerance certificate failed.

    Carries both trajectories and the first sample time at which they
    disagree by more than the convergence threshold.
    """

    def __init__(self, message, coarse, fine, divergence_time):
        super().__init__(message)
        self.coarse = coarse
        self.fine = fine
        self.divergence_time = divergence_time


class RejectionExhausted(TribodyError):
    pass


class FormatError(TribodyError, ValueError):
    def __init__(self, message, path=None, line=None, field=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        super().__init__(f"{': '.join(loc)}: {message}" if loc else message)
        self.path = path
        self.line = line
        self.field = field


class VersionMismatch(TribodyError, ValueError):
    pass


class DegenerateReservoir(TribodyError):
    pass


class NoConvergence(TribodyError):
    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class IllConditioned(TribodyError, ArithmeticError):
    pass


class Untrained(TribodyError):
    pass


class DimensionMismatch(TribodyError, ValueError):
    pass


class EmptyBatch(TribodyError, ValueError):
    pass


class NonFiniteLoss(TribodyError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class NonFiniteState(TribodyError, ArithmeticError):
    pass


class LengthMismatch(TribodyError, ValueError):
    pass


class TooFewValues(TribodyError, ValueError):
    pass


class ModelDatasetMismatch(TribodyError, ValueError):
    pass


class ConfigError(TribodyError, ValueError):
    pass
