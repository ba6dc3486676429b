"""Numba switch shared by all kernel modules.

Set ``FRACSIM_NUMBA=0`` in the environment to run every hot kernel through
its pure-numpy fallback instead of the compiled loop version.  The flag is
read once at import time.
"""

import os

_flag = os.environ.get("FRACSIM_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

if not HAVE_NUMBA:
    USE_NUMBA = False

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
    "error_model": "numpy",
}


def njit(fn):
    """Compile ``fn`` with the project defaults, or return it untouched."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(**numba_default)(fn)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
