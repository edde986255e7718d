"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: InputError -> 1, ConfigError and
ModelError -> 2.
"""


class RheframeError(Exception):
    """Base class for all package errors."""


class InputError(RheframeError):
    """Unreadable, malformed, or invariant-violating input data."""


class ConfigError(RheframeError):
    """Invalid configuration or hyperparameter value."""


class ModelError(RheframeError):
    """Model persistence, version, or dimension-consistency failure."""
