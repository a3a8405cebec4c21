"""Numba backend selection for the hot numeric kernels.

The compiled path is the default whenever numba imports cleanly.  Set the
environment variable ``ALDA_NUMBA=0`` before import to force the pure-numpy
fallbacks (useful for debugging and for the backend benchmark), or
``ALDA_NUMBA=1`` to make a missing/broken numba an import error instead of a
silent fallback.
"""

import os

_FLAG = os.environ.get("ALDA_NUMBA", "auto").strip().lower()

if _FLAG not in ("0", "1", "auto", "false", "true"):
    raise ValueError(f"ALDA_NUMBA must be one of 0/1/auto, got {_FLAG!r}")

_want_numba = _FLAG not in ("0", "false")

NUMBA_ENABLED = False

if _want_numba:
    try:
        from numba import njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        if _FLAG in ("1", "true"):
            raise

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit when the fallback path is active."""

        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return wrap


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
