"""Exception types raised across the package."""


class KsmeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(KsmeError, ValueError):
    """Array shapes do not line up."""


class ConfigError(KsmeError, ValueError):
    """A configuration or parameter value is out of range."""


class InvalidMdpError(KsmeError, ValueError):
    """An MDP (or policy) fails validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DegenerateGarnetError(KsmeError):
    """A Garnet MDP cannot be rescaled to a positive reward dispersion."""


class NotNegativeTypeError(KsmeError, ValueError):
    """A semimetric does not induce a positive semidefinite kernel."""


class NotPSDError(KsmeError, ValueError):
    """A kernel matrix has an eigenvalue below the allowed slack."""


class SizeError(KsmeError, ValueError):
    """The problem is too large for the requested method."""


class NonConvergenceError(KsmeError):
    """A fixed-point iteration hit its iteration cap.

    Attributes:
      report: the FixedPointReport at the moment of giving up.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

    @property
    def last_residual(self):
        return None if self.report is None else self.report.final_residual


class DivergenceError(KsmeError):
    """Training produced a non-finite parameter."""

    def __init__(self, step):
        super().__init__(f"non-finite parameters at step {step}")
        self.step = step
