"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition or range."""


class ParseError(ValidationError):
    """Malformed file content; the message names the offending line or byte."""


class NonConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap before reaching tolerance."""
