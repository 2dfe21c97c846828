"""Exception types raised by the toolkit."""


class FBSDEError(Exception):
    """Base class for all toolkit errors."""


class InvalidProblemError(FBSDEError, ValueError):
    """A problem, grid or config breaks one of its invariants."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NonFiniteError(FBSDEError, FloatingPointError):
    """A coefficient, policy or integrand produced NaN or inf."""


class UnstableStepError(FBSDEError, RuntimeError):
    """The explicit backward scheme blew up."""


class ConfigError(FBSDEError, ValueError):
    """Malformed configuration document, with source position when known."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
