"""Exception types raised across the package."""


class NorstError(Exception):
    """Base class for all errors raised by norstmiss."""


class NumericalError(NorstError):
    """A numerical routine could not produce a trustworthy result."""


class RankDeficient(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class DimensionMismatch(NorstError, ValueError):
    pass


class ShapeMismatch(NorstError, ValueError):
    pass


class NotSkewSymmetric(NorstError, ValueError):
    pass


class ZeroMatrix(NorstError, ValueError):
    pass


class ConfigInvalid(NorstError, ValueError):
    """Configuration rejected; ``errors`` maps field names to messages."""

    def __init__(self, errors):
        self.errors = dict(errors)
        msg = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(msg or "invalid configuration")


class ParseError(NorstError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f" line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class BudgetExceeded(NorstError):
    """Missing-entry fraction per column too large for projected least squares."""


class BudgetWarning(UserWarning):
    pass
