"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
ModelStateError -> 4.
"""


class NhvcError(Exception):
    """Base class for package errors."""


class ConfigError(NhvcError):
    """Invalid or inconsistent configuration."""


class DataError(NhvcError):
    """Problem with input data (files, manifests, shapes of user data)."""


class AudioFormatError(DataError):
    """Unreadable or corrupt audio file."""


class UnsupportedCodecError(AudioFormatError):
    """Readable container but an encoding we do not handle."""


class ModelStateError(NhvcError):
    """Missing, untrained, or incompatible model state."""
