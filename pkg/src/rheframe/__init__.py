"""rheframe: detection and localization of AI-competition rhetorical frames.

A four-stage hierarchy over news articles: a keyword gate for AI mentions,
a document-level frame classifier, a paragraph-level frame classifier, and
attention-based frame-span extraction. All numerical training routines are
implemented in numpy, with numba-compiled hot kernels (set
``RHEFRAME_DISABLE_NUMBA=1`` for the pure-numpy fallback).
"""

__version__ = "0.1.0"

from rheframe.errors import ConfigError, InputError, ModelError, RheframeError

__all__ = [
    "__version__",
    "RheframeError",
    "InputError",
    "ConfigError",
    "ModelError",
]
