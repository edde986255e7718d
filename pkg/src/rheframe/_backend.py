"""Kernel backend selection: numba-jitted or pure-numpy fallback.

Hot numeric kernels are written once in numba-compatible numpy and compiled
with ``@njit`` when numba is available. Setting ``RHEFRAME_DISABLE_NUMBA=1``
(or a missing numba install) selects the interpreted numpy fallback, which
runs the identical source. ``benchmarks/bench_kernels.py`` compares both.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("RHEFRAME_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

if not _DISABLED:
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False


def backend_name() -> str:
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if NUMBA_ENABLED else "numpy"


def maybe_njit(func):
    """Compile ``func`` with numba unless the numpy fallback is selected."""
    if NUMBA_ENABLED:
        return _njit(cache=True, fastmath=False)(func)
    return func
