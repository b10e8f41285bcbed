"""Exception types shared across the package."""


class PvrpError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PvrpError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ValidationError(PvrpError, ValueError):
    """An instance or solution violates a structural invariant."""


class FeasibilityError(PvrpError, ValueError):
    """A solution (or requested computation) is infeasible for the instance."""


class ParseError(PvrpError, ValueError):
    """A text file could not be parsed.

    Carries the 1-based line number when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
