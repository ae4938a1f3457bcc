"""Numba switch.

Kernels are compiled with numba when it is importable and ``QEKIT_DISABLE_JIT``
is unset (or "0"). Otherwise every kernel falls back to its pure-numpy twin.
The flag is read once at import time.
"""

from __future__ import annotations

import os

_flag = os.environ.get("QEKIT_DISABLE_JIT", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False

USE_JIT = HAS_NUMBA and not _disabled


def njit(fn):
    """Compile ``fn`` in nopython mode with on-disk caching, if numba is present."""
    if _njit is None:
        return fn
    return _njit(cache=True, nogil=True)(fn)


def select(jit_fn, numpy_fn):
    return jit_fn if USE_JIT else numpy_fn
