class DomainError(ValueError):
    """Input outside the domain of a model function."""


class ConfigError(ValueError):
    """Inconsistent or invalid run configuration."""


class NumericError(RuntimeError):
    """Integration or optimization failed to reach the requested accuracy."""
