"""Optional numba acceleration.

Set ``TLSPOSE_DISABLE_NUMBA=1`` to force the vectorised NumPy kernels even
when numba is importable.
"""

import os

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def numba_requested():
    flag = os.environ.get("TLSPOSE_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("1", "true", "yes", "on")


def default_backend():
    return "numba" if NUMBA_AVAILABLE and numba_requested() else "numpy"
