"""Exception types raised across the package."""


class DomainError(ValueError):
    """An input lies outside the domain of the requested computation."""


class UndefinedRatioError(DomainError):
    """A ratio statistic has a zero denominator."""


class ValidationError(ValueError):
    """Input data violates a structural invariant."""


class ParseError(ValidationError):
    """A data file could not be parsed.

    Parameters
    ----------
    message : str
        Description of the problem.
    line : int, optional
        1-based line number in the source file.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyUniverseError(ValidationError):
    """A price window contains no eligible assets."""


class LpError(RuntimeError):
    """The LP engine failed for numerical reasons."""


class LpIterationLimit(LpError):
    """The LP engine hit its iteration cap."""
