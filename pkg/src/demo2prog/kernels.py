"""Backend selection for the trace-compression kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``DEMO2PROG_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DEMO2PROG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _as_i64(s):
    return np.ascontiguousarray(np.asarray(s, dtype=np.int64))


def best_repeat(s):
    return _impl.best_repeat(_as_i64(s))


def longest_odd_palindrome(s):
    return _impl.longest_odd_palindrome(_as_i64(s))
