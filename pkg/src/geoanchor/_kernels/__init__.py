"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``GEOANCHOR_NUMBA`` is not set
to ``0``. Both paths take and return the same values; the test suite checks
them against each other.
"""
from __future__ import annotations

import os

from . import numpy_impl

BACKEND = "numpy"
_impl = numpy_impl

if os.environ.get("GEOANCHOR_NUMBA", "1") != "0":
    try:
        from . import numba_impl
    except ImportError:  # numba not installed
        numba_impl = None
    else:
        _impl = numba_impl
        BACKEND = "numba"

intersection_volume = _impl.intersection_volume
count_inside = _impl.count_inside

__all__ = ["BACKEND", "intersection_volume", "count_inside", "numpy_impl"]
