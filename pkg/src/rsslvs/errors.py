"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Malformed configuration. ``key`` holds the offending key path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class InfeasibleError(RuntimeError):
    """No location satisfies the geometric constraints."""
