"""Exception types shared across the simulator."""


class MMFQKDError(Exception):
    """Base class for all simulator errors."""


class ConfigError(MMFQKDError, ValueError):
    """Invalid or non-physical configuration."""


class NoSignalError(MMFQKDError):
    """A gated acquisition registered zero counts."""


class AlignmentError(MMFQKDError):
    """The histogram carries no information to align against."""


class InsufficientDataError(MMFQKDError):
    """Too few trials to form a statistic."""


class BoundError(MMFQKDError, ValueError):
    """A decoy bound is undefined for the given inputs."""


class CalibrationError(MMFQKDError):
    """Calibration did not converge; carries the best parameters found."""

    def __init__(self, message, best=None, residuals=None):
        super().__init__(message)
        self.best = best
        self.residuals = residuals


class ParseError(MMFQKDError, ValueError):
    """Malformed input file; the message carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line
