"""Exception types shared across the package."""


class BDError(Exception):
    """Base class for all errors raised by this package."""


class ChainError(BDError, ValueError):
    """Invalid transition rates. ``index`` names the offending state when known."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SpectralError(BDError, ArithmeticError):
    """Eigensolver failure or an ill-conditioned spectrum."""


class NumericError(BDError, ArithmeticError):
    """A quantity cannot be evaluated reliably in double precision."""


class ConfigError(BDError, ValueError):
    """Malformed input file or command-line configuration."""


class PreconditionError(BDError, ValueError):
    """A check was requested on a chain that does not meet its hypothesis."""
