"""JIT backend selection.

Kernels are compiled with numba when it is importable, unless the
``ECOHEAT_DISABLE_NUMBA`` environment variable is set to a truthy value, in
which case the vectorized numpy implementations are used instead.  The flag is
read once at import time.
"""

import os

_FALSY = ("", "0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("ECOHEAT_DISABLE_NUMBA", "").strip().lower() in _FALSY


def njit(func):
    """``numba.njit(cache=True)`` when numba is installed, identity otherwise."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
