"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid model, scenario or monitor configuration."""


class InvariantViolation(RuntimeError):
    """An internal simulation invariant was broken at runtime."""
