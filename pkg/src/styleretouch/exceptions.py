"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, dimensions, or settings."""


class UsageError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a loss or gradient."""


class FingerprintMismatch(ValueError):
    """A reference library was built with a different model checkpoint."""
