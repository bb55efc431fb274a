"""Kernel backend selection.

Hot numeric loops (isotonic projection, GCM slopes, the Cox inner loop)
ship in two versions: numba-compiled and pure numpy. The numpy path is
selected by setting the environment variable ``CURRSTAT_DISABLE_NUMBA=1``
before import, or automatically if numba is unavailable.
"""

import os

_FLAG = os.environ.get("CURRSTAT_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes")

if not _DISABLED:
    try:
        import numba  # noqa: F401
        _HAVE_NUMBA = True
    except ImportError:
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False


def using_numba() -> bool:
    """True if the numba-compiled kernels are active."""
    return _HAVE_NUMBA
