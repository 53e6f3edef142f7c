"""Numba switch.

Set ``RTFN_NUMBA=0`` to run every kernel as plain numpy. The flag is read once,
at import time.
"""
import os
import warnings

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

ENABLE_NUMBA = numba is not None and os.environ.get("RTFN_NUMBA", "1").lower() not in ("0", "false", "no", "off")
CACHE_NUMBA = True


def compiled(func):
    """Lazily-compiling numba dispatcher for ``func``; compilation happens on first call."""
    if numba is None:  # pragma: no cover
        return func
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return numba.njit(cache=CACHE_NUMBA, nogil=True)(func)
