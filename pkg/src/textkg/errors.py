"""Shared exception types."""


class TextkgError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TextkgError):
    """Invalid configuration: bad file, bad key, or inconsistent settings."""


class ConfigMismatchError(TextkgError):
    """Artifacts built under incompatible configurations were combined."""
