"""Numba switch.

The hot loops in :mod:`aberrant.kernels` exist twice: a numba version and a
vectorized numpy version.  Setting the environment variable
``ABERRANT_DISABLE_NUMBA=1`` (read once, at import) selects the numpy versions.
Without numba installed the numpy versions are always used.
"""
import os

DISABLE_FLAG = "ABERRANT_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def _flag_set(value):
    return value.strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _flag_set(os.environ.get(DISABLE_FLAG, ""))


def njit(fn):
    """Compile ``fn`` with numba when it is importable, else return it unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def backend():
    return "numba" if USE_NUMBA else "numpy"
