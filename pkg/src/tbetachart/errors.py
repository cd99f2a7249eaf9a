class TbetaError(Exception):
    """Base class for errors raised by tbetachart."""


class DomainError(TbetaError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataError(TbetaError, ValueError):
    """Observations are unusable: outside the support, degenerate, unparsable."""


class ConfigError(TbetaError, ValueError):
    """Invalid chart or simulation configuration."""


class ConvergenceError(TbetaError, RuntimeError):
    """A root finder or optimizer did not converge."""
