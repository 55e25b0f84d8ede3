"""Select between numba-compiled and plain numpy execution of the hot loops.

Set ``STRCGP_DISABLE_NUMBA=1`` (or ``true``/``yes``/``on``) before importing
the package to run the pure-numpy path. If numba is not importable the numpy
path is used regardless. The choice is made once, at import time; compare the
two paths by running separate processes (see ``benchmarks/bench_backends.py``).
"""

import os

_FLAG = os.environ.get("STRCGP_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED_BY_ENV = _FLAG in ("1", "true", "yes", "on")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED_BY_ENV


def maybe_njit(func):
    """``numba.njit`` when the compiled path is active, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
