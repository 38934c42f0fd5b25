"""Shared exception types."""


class NumericError(RuntimeError):
    """A numerical procedure failed to converge or produced invalid values."""


class ConfigError(ValueError):
    """A run configuration is malformed or out of range."""
