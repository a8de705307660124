"""Hot inner loops with two interchangeable backends.

The numba backend is used when numba imports cleanly, unless the
environment variable ``LOGQ_DISABLE_NUMBA`` is set to a non-empty value
other than ``0``. Both backends are importable directly for
cross-checking and benchmarking.
"""

import os

from . import numpy_impl


def _numba_requested():
    flag = os.environ.get("LOGQ_DISABLE_NUMBA", "")
    return flag in ("", "0")


def _load_numba():
    try:
        from . import numba_impl
    except ImportError:
        return None
    return numba_impl


numba_impl = _load_numba()
HAVE_NUMBA = numba_impl is not None
USE_NUMBA = HAVE_NUMBA and _numba_requested()

backend = numba_impl if USE_NUMBA else numpy_impl
BACKEND_NAME = "numba" if USE_NUMBA else "numpy"

cms_buckets = backend.cms_buckets
cms_accumulate = backend.cms_accumulate
cms_min_query = backend.cms_min_query
scatter_rows = backend.scatter_rows
dense_scatter = backend.dense_scatter
row_softmax = backend.row_softmax

__all__ = [
    "BACKEND_NAME",
    "HAVE_NUMBA",
    "USE_NUMBA",
    "numpy_impl",
    "numba_impl",
    "cms_buckets",
    "cms_accumulate",
    "cms_min_query",
    "scatter_rows",
    "dense_scatter",
    "row_softmax",
]
