"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised for invalid configuration values or unusable combinations of them."""


class DataError(RuntimeError):
    """Raised when dataset files are missing, empty or unreadable."""
